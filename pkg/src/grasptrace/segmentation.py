"""Organized point clouds, RANSAC table-plane fitting, and object masking.

Clouds are stored image-aligned: one 3D point (camera frame, metres) per
pixel, NaN for dropped depth readings. The recovered support plane lets us
cut everything at table height and keep a dilated mask over what sticks up.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, DataError, SegmentationError

CLOUD_TEXT_MAGIC = "pcloud"
CLOUD_BINARY_MAGIC = b"pcloudb"


class OrganizedPointCloud:
    """(H, W, 3) camera-frame points with NaN rows marking invalid pixels."""

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 3 or points.shape[2] != 3:
            raise DataError(f"expected (h, w, 3) points, got {points.shape}")
        nan = np.isnan(points)
        partial = nan.any(axis=2) & ~nan.all(axis=2)
        if partial.any():
            raise DataError(
                f"{int(partial.sum())} pixels have partially-NaN points; "
                "a pixel must be fully valid or fully NaN")
        self.points = points

    @property
    def shape(self) -> tuple[int, int]:
        return self.points.shape[:2]

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.points[..., 0])

    def valid_points(self) -> np.ndarray:
        return self.points[self.valid]

    def nearest_valid(self, row: int, col: int, radius: int = 5,
                      within: np.ndarray | None = None
                      ) -> tuple[int, int] | None:
        """Closest pixel with depth within `radius`, ties by (distance, row,
        col); None when the neighbourhood is entirely invalid. An optional
        boolean `within` map further restricts the search (e.g. to an object
        mask, so a lookup near a rim cannot fall off onto the surface
        behind it)."""
        h, w = self.shape
        usable = self.valid if within is None else (self.valid & within)
        if usable[row, col]:
            return row, col
        best = None
        for r in range(max(0, row - radius), min(h, row + radius + 1)):
            for c in range(max(0, col - radius), min(w, col + radius + 1)):
                if not usable[r, c]:
                    continue
                d2 = (r - row) ** 2 + (c - col) ** 2
                if d2 > radius * radius:
                    continue
                key = (d2, r, c)
                if best is None or key < best:
                    best = key
        return None if best is None else (best[1], best[2])

    # -- serialization ------------------------------------------------------

    def save_text(self, path) -> None:
        h, w = self.shape
        with open(path, "w") as f:
            f.write(f"{CLOUD_TEXT_MAGIC} {h} {w}\n")
            np.savetxt(f, self.points.reshape(-1, 3), fmt="%.17g")

    @classmethod
    def load_text(cls, path) -> "OrganizedPointCloud":
        with open(path) as f:
            header = f.readline().split()
            if len(header) != 3 or header[0] != CLOUD_TEXT_MAGIC:
                raise DataError(f"{path}: not a {CLOUD_TEXT_MAGIC} file")
            h, w = int(header[1]), int(header[2])
            flat = np.loadtxt(f, ndmin=2)
        if flat.shape != (h * w, 3):
            raise DataError(
                f"{path}: expected {h * w} rows of 3, got {flat.shape}")
        return cls(flat.reshape(h, w, 3))

    def save_binary(self, path) -> None:
        h, w = self.shape
        with open(path, "wb") as f:
            f.write(CLOUD_BINARY_MAGIC + b" %d %d\n" % (h, w))
            f.write(self.points.astype("<f4").tobytes())

    @classmethod
    def load_binary(cls, path) -> "OrganizedPointCloud":
        with open(path, "rb") as f:
            header = f.readline().split()
            if len(header) != 3 or header[0] != CLOUD_BINARY_MAGIC:
                raise DataError(f"{path}: not a {CLOUD_BINARY_MAGIC.decode()} file")
            h, w = int(header[1]), int(header[2])
            raw = np.frombuffer(f.read(), dtype="<f4")
        if raw.size != h * w * 3:
            raise DataError(
                f"{path}: expected {h * w * 3} float32 values, got {raw.size}")
        return cls(raw.astype(np.float64).reshape(h, w, 3))


class Plane:
    """n·p + d = 0 with unit n oriented so the camera origin is on the
    positive side (d > 0 for a physical table below the camera)."""

    def __init__(self, normal: np.ndarray, offset: float):
        normal = np.asarray(normal, dtype=np.float64)
        norm = np.linalg.norm(normal)
        if not np.isfinite(norm) or norm < 1e-12:
            raise SegmentationError("degenerate plane normal")
        normal = normal / norm
        offset = float(offset) / norm
        if offset < 0:
            normal, offset = -normal, -offset
        self.normal = normal
        self.offset = offset

    def signed_height(self, points: np.ndarray) -> np.ndarray:
        """Height above the plane, positive on the camera side."""
        return points @ self.normal + self.offset

    def __repr__(self):
        n = self.normal
        return f"Plane(n=({n[0]:.4f}, {n[1]:.4f}, {n[2]:.4f}), d={self.offset:.4f})"


def _fit_plane_lsq(points: np.ndarray) -> Plane:
    """Total least squares: smallest-eigenvector of the centred covariance."""
    centroid = points.mean(axis=0)
    centred = points - centroid
    cov = centred.T @ centred
    _, vecs = np.linalg.eigh(cov)
    normal = vecs[:, 0]
    return Plane(normal, -float(normal @ centroid))


def ransac_plane(cloud: OrganizedPointCloud, iterations: int = 200,
                 inlier_threshold: float = 0.005,
                 seed: int | None = 0) -> tuple[Plane, np.ndarray]:
    """Dominant plane by RANSAC + least-squares refit over its inliers.

    Returns the plane and the image-shaped inlier mask. Sampling is driven
    by a seeded generator so runs are reproducible.
    """
    if iterations < 1:
        raise ConfigurationError("iterations must be >= 1")
    if inlier_threshold <= 0:
        raise ConfigurationError("inlier_threshold must be positive")
    pts = cloud.valid_points()
    if pts.shape[0] < 3:
        raise SegmentationError(
            f"need at least 3 valid points to fit a plane, got {pts.shape[0]}")
    rng = np.random.default_rng(seed)
    best_count = -1
    best_dist = None
    for _ in range(iterations):
        idx = rng.choice(pts.shape[0], size=3, replace=False)
        p0, p1, p2 = pts[idx]
        normal = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue  # collinear sample
        normal = normal / norm
        dist = np.abs(pts @ normal - normal @ p0)
        count = int((dist <= inlier_threshold).sum())
        if count > best_count:
            best_count = count
            best_dist = dist
    if best_dist is None:
        raise SegmentationError("all RANSAC samples were degenerate")
    plane = _fit_plane_lsq(pts[best_dist <= inlier_threshold])
    # Refit can shift the boundary; recompute inliers against the final plane.
    height = plane.signed_height(cloud.points)
    inliers = np.abs(height) <= inlier_threshold
    inliers &= cloud.valid
    return plane, inliers


def object_mask(cloud: OrganizedPointCloud, plane: Plane,
                min_height: float = 0.01, dilate_radius: int = 3) -> np.ndarray:
    """Binary mask of pixels at least `min_height` above the plane, dilated
    by a disc so object borders survive downsampling."""
    if min_height <= 0:
        raise ConfigurationError("min_height must be positive")
    height = plane.signed_height(cloud.points)
    raised = np.zeros(cloud.shape, dtype=bool)
    v = cloud.valid
    raised[v] = height[v] >= min_height
    if not raised.any():
        raise SegmentationError(
            f"no points rise {min_height:.3f} m above the support plane")
    if dilate_radius > 0:
        yy, xx = np.mgrid[-dilate_radius:dilate_radius + 1,
                          -dilate_radius:dilate_radius + 1]
        disc = (yy * yy + xx * xx) <= dilate_radius * dilate_radius
        raised = ndimage.binary_dilation(raised, structure=disc)
    return raised
