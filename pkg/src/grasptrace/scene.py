"""Synthetic tabletop RGB-D scenes rendered by analytic ray casting.

The table frame has x pointing away from the camera along the ground, y to
the image left, z up; the camera hangs above and behind the origin, pitched
down so its optical axis hits the origin. Rays are cast per pixel against
the table plane, boxes, and upright cylinders; the nearest hit fills both
the shaded color image and the organized camera-frame point cloud, so every
cloud point back-projects exactly to its pixel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError
from .grasp import HAND_FRAME, INDEX_TIP, THUMB_TIP
from .segmentation import OrganizedPointCloud

TABLE_COLOR = (0.13, 0.13, 0.15)
AMBIENT = 0.35
LIGHT = (-0.35, 0.25, 1.0)
HAND_SETBACK = 0.08     # hand frame distance in front of the grasped face
EDGE_INSET = 0.03       # finger tips this far from the face's left edge
TOP_INSET = 0.03        # finger tips this far below the top rim
_EPS = 1e-9


@dataclass(frozen=True)
class CameraModel:
    fx: float = 300.0
    fy: float = 300.0
    cx: float = 113.0
    cy: float = 113.0
    width: int = 227
    height: int = 227

    def project(self, points: np.ndarray) -> np.ndarray:
        """Camera-frame points -> (row, col) pixel coordinates."""
        points = np.atleast_2d(points)
        z = points[:, 2]
        if (z <= 0).any():
            raise DataError("cannot project points at or behind the camera")
        rows = self.fy * points[:, 1] / z + self.cy
        cols = self.fx * points[:, 0] / z + self.cx
        return np.stack([rows, cols], axis=1)

    def ray_dirs(self) -> np.ndarray:
        """Per-pixel camera-frame ray directions with unit z component."""
        cols, rows = np.meshgrid(np.arange(self.width), np.arange(self.height))
        return np.stack([(cols - self.cx) / self.fx,
                         (rows - self.cy) / self.fy,
                         np.ones_like(cols, dtype=float)], axis=-1)


@dataclass(frozen=True)
class CameraPose:
    """rows of `rotation` are the camera axes expressed in the table frame."""

    rotation: np.ndarray
    position: np.ndarray

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(points) - self.position) @ self.rotation.T

    def to_table(self, points: np.ndarray) -> np.ndarray:
        return np.atleast_2d(points) @ self.rotation + self.position


def overhead_pose(height: float = 0.70, pitch_deg: float = 55.0) -> CameraPose:
    """Camera `height` above the table, pitched down so the optical axis hits
    the table origin."""
    p = math.radians(pitch_deg)
    position = np.array([-height / math.tan(p), 0.0, height])
    x_cam = np.array([0.0, -1.0, 0.0])                    # image right
    z_cam = np.array([math.cos(p), 0.0, -math.sin(p)])    # optical axis
    y_cam = np.cross(z_cam, x_cam)                        # image down
    return CameraPose(np.stack([x_cam, y_cam, z_cam]), position)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Axis z-up cuboid resting on the table, rotated by yaw about z."""

    center: tuple[float, float]
    yaw: float
    size: tuple[float, float, float]   # (depth x, width y, height z)
    color: tuple[float, float, float]

    def __post_init__(self):
        if min(self.size) <= 0:
            raise ConfigurationError(f"non-positive box size {self.size}")

    def _rot(self) -> np.ndarray:
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def intersect(self, origin: np.ndarray, dirs: np.ndarray):
        rot = self._rot()
        center = np.array([self.center[0], self.center[1], 0.0])
        o = rot.T @ (origin - center)
        d = dirs @ rot
        lo = np.array([-self.size[0] / 2, -self.size[1] / 2, 0.0])
        hi = np.array([self.size[0] / 2, self.size[1] / 2, self.size[2]])
        near = np.full((dirs.shape[0], 3), -np.inf)
        far = np.full((dirs.shape[0], 3), np.inf)
        for ax in range(3):
            da = d[:, ax]
            nz = da != 0.0
            a = (lo[ax] - o[ax]) / np.where(nz, da, 1.0)
            b = (hi[ax] - o[ax]) / np.where(nz, da, 1.0)
            inside = (lo[ax] <= o[ax]) & (o[ax] <= hi[ax])
            near[:, ax] = np.where(nz, np.minimum(a, b),
                                   np.where(inside, -np.inf, np.inf))
            far[:, ax] = np.where(nz, np.maximum(a, b),
                                  np.where(inside, np.inf, -np.inf))
        axis = near.argmax(axis=1)
        tmin = near.max(axis=1)
        tmax = far.min(axis=1)
        hit = (tmax >= tmin) & (tmin > _EPS) & np.isfinite(tmin)
        normals = np.zeros_like(dirs)
        rows = np.arange(dirs.shape[0])
        sign = -np.sign(d[rows, axis])
        local = np.zeros_like(dirs)
        local[rows, axis] = sign
        normals[hit] = local[hit] @ rot.T
        albedo = np.ones(dirs.shape[0])
        return np.where(hit, tmin, np.inf), normals, hit, albedo


@dataclass(frozen=True)
class Cylinder:
    """Upright cylinder resting on the table.

    The surface carries a bold label print: reflectance alternates between
    light and dark vertical bands two facets wide (side and cap alike),
    the way canned goods wear striped wrappers.  `stripe` is the relative
    amplitude of that alternation.
    """

    center: tuple[float, float]
    radius: float
    height: float
    color: tuple[float, float, float]
    facets: int = 24
    stripe: float = 0.30

    def __post_init__(self):
        if self.radius <= 0 or self.height <= 0:
            raise ConfigurationError(
                f"non-positive cylinder dims r={self.radius} h={self.height}")
        if self.facets < 3:
            raise ConfigurationError("need at least 3 shading facets")

    def intersect(self, origin: np.ndarray, dirs: np.ndarray):
        ox = origin[0] - self.center[0]
        oy = origin[1] - self.center[1]
        oz = origin[2]
        dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        a = dx * dx + dy * dy
        b = 2.0 * (ox * dx + oy * dy)
        c = ox * ox + oy * oy - self.radius ** 2
        disc = b * b - 4.0 * a * c
        ok = (disc >= 0.0) & (a > 0.0)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t_side = np.where(ok, (-b - sq) / np.where(a > 0, 2.0 * a, 1.0), np.inf)
        z_side = oz + t_side * dz
        side_hit = ok & (t_side > _EPS) & (z_side >= 0.0) & (z_side <= self.height)
        t_side = np.where(side_hit, t_side, np.inf)

        dz_nz = dz != 0.0
        t_cap = np.where(dz_nz, (self.height - oz) / np.where(dz_nz, dz, 1.0),
                         np.inf)
        px = ox + t_cap * dx
        py = oy + t_cap * dy
        cap_hit = dz_nz & (t_cap > _EPS) & (px * px + py * py
                                            <= self.radius ** 2)
        t_cap = np.where(cap_hit, t_cap, np.inf)

        t = np.minimum(t_side, t_cap)
        hit = np.isfinite(t)
        use_side = side_hit & (t_side <= t_cap)
        use_cap = cap_hit & ~use_side
        normals = np.zeros_like(dirs)
        albedo = np.ones(dirs.shape[0])
        step = 2.0 * math.pi / self.facets
        normals[use_cap] = (0.0, 0.0, 1.0)
        # Stripe boundaries sit half a facet off the shading facets, so the
        # reflectance steps land where the shading is flat.
        if use_cap.any():
            theta = np.arctan2(py[use_cap], px[use_cap])
            parity = (np.floor(theta / step + 0.5).astype(int) >> 1) & 1
            albedo[use_cap] = 1.0 + self.stripe * (2.0 * parity - 1.0)
        if use_side.any():
            hx = ox + t_side[use_side] * dx[use_side]
            hy = oy + t_side[use_side] * dy[use_side]
            theta = np.arctan2(hy, hx)
            idx = np.floor(theta / step).astype(int)
            theta_q = (idx + 0.5) * step
            normals[use_side, 0] = np.cos(theta_q)
            normals[use_side, 1] = np.sin(theta_q)
            parity = (np.floor(theta / step + 0.5).astype(int) >> 1) & 1
            albedo[use_side] = 1.0 + self.stripe * (2.0 * parity - 1.0)
        return t, normals, hit, albedo


SceneObject = Box | Cylinder


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

@dataclass
class TableScene:
    objects: list[SceneObject] = field(default_factory=list)
    camera: CameraModel = field(default_factory=CameraModel)
    pose: CameraPose = field(default_factory=overhead_pose)

    def render(self, depth_dropout: float = 0.0, seed: int | None = None
               ) -> tuple[np.ndarray, OrganizedPointCloud]:
        """Shaded (3, H, W) image in [0, 1] plus the organized point cloud.

        Depth dropout knocks out a random fraction of cloud pixels (seeded),
        imitating sensor holes; the color image is unaffected.
        """
        cam, pose = self.camera, self.pose
        h, w = cam.height, cam.width
        dirs_cam = cam.ray_dirs().reshape(-1, 3)
        dirs_t = dirs_cam @ pose.rotation  # R.T applied row-wise
        origin = pose.position
        n = dirs_t.shape[0]

        best_t = np.full(n, np.inf)
        colors = np.zeros((n, 3))
        normals = np.zeros((n, 3))

        # Table plane z=0.
        dz = dirs_t[:, 2]
        t_plane = np.where(dz < 0.0, -origin[2] / np.where(dz < 0, dz, 1.0),
                           np.inf)
        plane_hit = t_plane > _EPS
        best_t = np.where(plane_hit, t_plane, best_t)
        colors[plane_hit] = TABLE_COLOR
        normals[plane_hit] = (0.0, 0.0, 1.0)

        for obj in self.objects:
            t, nrm, hit, alb = obj.intersect(origin, dirs_t)
            closer = hit & (t < best_t)
            best_t = np.where(closer, t, best_t)
            colors[closer] = np.asarray(obj.color) * alb[closer, None]
            normals[closer] = nrm[closer]

        light = np.asarray(LIGHT) / np.linalg.norm(LIGHT)
        lambert = np.clip(normals @ light, 0.0, None)
        shade = AMBIENT + (1.0 - AMBIENT) * lambert
        rgb = np.clip(colors * shade[:, None], 0.0, 1.0)

        valid = np.isfinite(best_t)
        points = np.where(valid[:, None], dirs_cam * best_t[:, None], np.nan)
        if depth_dropout > 0.0:
            rng = np.random.default_rng(seed)
            points[rng.random(n) < depth_dropout] = np.nan
        rgb = np.where(valid[:, None], rgb, 0.0)

        image = rgb.T.reshape(3, h, w).copy()
        cloud = OrganizedPointCloud(points.reshape(h, w, 3))
        return image, cloud


# ---------------------------------------------------------------------------
# Grasp annotations
# ---------------------------------------------------------------------------

def _front_face(box: Box, pose: CameraPose):
    """Outward normal, half-depth, and width of the face most toward the
    camera."""
    rot = box._rot()
    center = np.array([box.center[0], box.center[1], 0.0])
    to_cam = pose.position - center
    to_cam[2] = 0.0
    norm = np.linalg.norm(to_cam)
    if norm < 1e-9:
        raise DataError("camera directly above the box center")
    to_cam /= norm
    best = None
    for axis, flip in ((0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0)):
        n = rot[:, axis] * flip
        score = float(n @ to_cam)
        if best is None or score > best[0]:
            half = box.size[axis] / 2.0
            width = box.size[1 - axis]
            best = (score, n, half, width)
    _, n, half, width = best
    return n, half, width


def annotate_box(box: Box, pose: CameraPose) -> dict[str, np.ndarray]:
    """Pinch across the camera-facing face, tips inset from its top-left rim.

    Returns camera-frame positions for the hand frame and both finger tips.
    Table-frame construction: the thumb touches the front face, the index
    the opposite face, both TOP_INSET below the top rim and EDGE_INSET from
    the face's left edge (as seen from the camera) — fixed insets from the
    rim, so the demonstrated pinch sits at the same place relative to the
    visible edges no matter the object's size. The hand frame floats
    HAND_SETBACK from the pinch midpoint toward the camera, which keeps both
    tips inside the hand's reach.
    """
    n, half, width = _front_face(box, pose)
    if EDGE_INSET >= width:
        raise DataError(
            f"box face width {width:.3f} m too narrow for {EDGE_INSET} m inset")
    if TOP_INSET >= box.size[2]:
        raise DataError(
            f"box height {box.size[2]:.3f} m too low for {TOP_INSET} m inset")
    left = np.cross(n, [0.0, 0.0, 1.0])
    center = np.array([box.center[0], box.center[1],
                       box.size[2] - TOP_INSET])
    anchor = center + (width / 2.0 - EDGE_INSET) * left
    thumb = anchor + half * n
    index = anchor - half * n
    hand = anchor + HAND_SETBACK * n
    return {HAND_FRAME: pose.to_camera(hand)[0],
            THUMB_TIP: pose.to_camera(thumb)[0],
            INDEX_TIP: pose.to_camera(index)[0]}


def annotate_cylinder(cyl: Cylinder, pose: CameraPose) -> dict[str, np.ndarray]:
    """Pinch across the diameter along the camera direction, near the cap.

    The tips sit on the surface 2r apart, TOP_INSET below the cap rim, the
    thumb on the camera side; the hand frame floats HAND_SETBACK from the
    axis toward the camera. All in camera-frame coordinates.
    """
    if TOP_INSET >= cyl.height:
        raise DataError(
            f"cylinder height {cyl.height:.3f} m too low for {TOP_INSET} m inset")
    center = np.array([cyl.center[0], cyl.center[1],
                       cyl.height - TOP_INSET])
    thumb = center - np.array([cyl.radius, 0.0, 0.0])
    index = center + np.array([cyl.radius, 0.0, 0.0])
    hand = center - np.array([HAND_SETBACK, 0.0, 0.0])
    return {HAND_FRAME: pose.to_camera(hand)[0],
            THUMB_TIP: pose.to_camera(thumb)[0],
            INDEX_TIP: pose.to_camera(index)[0]}


def annotate(obj: SceneObject, pose: CameraPose) -> dict[str, np.ndarray]:
    if isinstance(obj, Box):
        return annotate_box(obj, pose)
    if isinstance(obj, Cylinder):
        return annotate_cylinder(obj, pose)
    raise ConfigurationError(f"cannot annotate {type(obj).__name__}")
