"""Hierarchical feature tuples over conv taps: ranking, trees, localization.

A feature is a short path of (tap, filter) pairs from a high conv layer
downward, e.g. (conv-5, 3) -> (conv-4, 7) -> (conv-3, 1). Filters are ranked
for consistency by summed log responses across training traces; a feature is
localized in a new image by descending the path with single-unit backprop and
reading the gradient footprint off the image.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError
from .network import (IMAGE, ActivationTrace, UnitRef, backward_single_path)
from .segmentation import OrganizedPointCloud

EPS_RESPONSE = 1e-6


@dataclass(frozen=True)
class HierFeature:
    """Path of (tap, filter) pairs, highest layer first."""

    path: tuple[tuple[str, int], ...]

    def __post_init__(self):
        if not self.path:
            raise ConfigurationError("empty feature path")
        taps = [tap for tap, _ in self.path]
        if len(set(taps)) != len(taps):
            raise ConfigurationError(f"repeated tap in feature path {taps}")
        for tap, f in self.path:
            if f < 0:
                raise ConfigurationError(f"negative filter index in {self.path}")

    def __len__(self) -> int:
        return len(self.path)

    @property
    def top(self) -> tuple[str, int]:
        return self.path[0]

    @property
    def lowest(self) -> tuple[str, int]:
        return self.path[-1]

    def key(self) -> str:
        return "/".join(f"{tap}:{f}" for tap, f in self.path)

    @classmethod
    def parse(cls, key: str) -> "HierFeature":
        parts = []
        for piece in key.split("/"):
            tap, _, f = piece.rpartition(":")
            if not tap:
                raise DataError(f"malformed feature key {key!r}")
            parts.append((tap, int(f)))
        return cls(tuple(parts))


@dataclass
class FeatureObservation:
    """Where a feature landed in one image, and how strongly it responded."""

    feature: HierFeature
    response: float
    centroid: tuple[float, float] | None = None  # (row, col), sub-pixel
    pixel: tuple[int, int] | None = None
    unit: UnitRef | None = None
    position: np.ndarray | None = None  # camera-frame metres

    @property
    def located(self) -> bool:
        return self.response > 0.0 and self.pixel is not None

    @property
    def usable(self) -> bool:
        return self.located and self.position is not None


def dead_observation(feature: HierFeature) -> FeatureObservation:
    return FeatureObservation(feature, 0.0)


# ---------------------------------------------------------------------------
# Per-trace response primitives
# ---------------------------------------------------------------------------

def map_responses(trace: ActivationTrace, tap: str) -> np.ndarray:
    """Per-filter response of a tap: the max activation in each map."""
    out = trace.output_at(tap)
    return out.reshape(out.shape[0], -1).max(axis=1)


def map_argmax_unit(trace: ActivationTrace, tap: str, filt: int) -> UnitRef:
    amap = trace.output_at(tap)[filt]
    r, c = np.unravel_index(int(np.argmax(amap)), amap.shape)
    return UnitRef(tap, filt, int(r), int(c))


def grad_responses(trace: ActivationTrace, unit: UnitRef, child_tap: str,
                   scale: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-filter max positive gradient at child_tap for one unit's path.

    Only units that actually fired are eligible: the gradient at a silent
    unit is sensitivity without evidence, and descending further from it
    would hit its closed ReLU gate anyway. `scale` carries the accumulated
    gradient of the original root activation with respect to `unit`, so
    returned values chain correctly across levels. Returns (responses (C,),
    units (C, 2) row/col of each max, -1 when dead).
    """
    grad = backward_single_path(trace, unit, target_tap=child_tap) * scale
    grad = np.where(trace.output_at(child_tap) > 0.0, grad, 0.0)
    c = grad.shape[0]
    flat = grad.reshape(c, -1)
    idx = flat.argmax(axis=1)
    vals = flat[np.arange(c), idx]
    units = np.stack(np.unravel_index(idx, grad.shape[1:]), axis=1)
    dead = vals <= 0.0
    vals = np.where(dead, 0.0, vals)
    units[dead] = -1
    return vals, units


# ---------------------------------------------------------------------------
# Consistency ranking
# ---------------------------------------------------------------------------

def log_sum_scores(rows: np.ndarray, eps: float = EPS_RESPONSE) -> np.ndarray:
    """Summed log response per filter across traces.

    A filter silent (<= eps) in any trace scores -inf: consistency means
    responding everywhere.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    alive = (rows > eps).all(axis=0)
    safe = np.log(np.clip(rows, eps, None)).sum(axis=0)
    return np.where(alive, safe, -np.inf)


def top_filters(scores: np.ndarray, n: int) -> list[int]:
    """Indices of the n best finite scores, ties broken toward low index."""
    order = np.argsort(-scores, kind="stable")
    return [int(i) for i in order[:n] if np.isfinite(scores[i])]


# ---------------------------------------------------------------------------
# Feature tree
# ---------------------------------------------------------------------------

@dataclass
class TreeNode:
    tap: str
    filter: int
    score: float
    children: list["TreeNode"] = field(default_factory=list)


@dataclass
class FeatureTree:
    """Top filters of the root tap, each expanded n4 x n3 levels down."""

    taps: tuple[str, str, str]
    roots: list[TreeNode]

    def root_features(self) -> list[HierFeature]:
        return [HierFeature(((self.taps[0], r.filter),)) for r in self.roots]

    def pair_features(self, root: TreeNode) -> list[HierFeature]:
        return [HierFeature(((self.taps[0], root.filter),
                             (self.taps[1], c.filter)))
                for c in root.children]

    def triple_features(self, root: TreeNode) -> list[HierFeature]:
        out = []
        for c in root.children:
            for g in c.children:
                out.append(HierFeature(((self.taps[0], root.filter),
                                        (self.taps[1], c.filter),
                                        (self.taps[2], g.filter))))
        return out

    def all_features(self) -> list[HierFeature]:
        out = list(self.root_features())
        for r in self.roots:
            out += self.pair_features(r)
            out += self.triple_features(r)
        return out

    # -- serialization ------------------------------------------------------

    MAGIC = "featuretree v1"

    def save_text(self, path) -> None:
        lines = [self.MAGIC, "taps " + " ".join(self.taps)]
        for r in self.roots:
            lines.append(f"root filter={r.filter} score={r.score!r}")
            for c in r.children:
                lines.append(f"child filter={c.filter} score={c.score!r}")
                for g in c.children:
                    lines.append(f"leaf filter={g.filter} score={g.score!r}")
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def load_text(cls, path) -> "FeatureTree":
        with open(path) as f:
            lines = [ln.strip() for ln in f if ln.strip()]
        if not lines or lines[0] != cls.MAGIC:
            raise DataError(f"{path}: not a {cls.MAGIC!r} file")
        if len(lines) < 2 or not lines[1].startswith("taps "):
            raise DataError(f"{path}: missing taps line")
        taps = tuple(lines[1].split()[1:])
        if len(taps) != 3:
            raise DataError(f"{path}: expected three taps, got {taps}")
        roots: list[TreeNode] = []
        for line in lines[2:]:
            kind, *kvs = line.split()
            kv = dict(item.split("=", 1) for item in kvs)
            node = TreeNode(tap="", filter=int(kv["filter"]),
                            score=float(kv["score"]))
            if kind == "root":
                node.tap = taps[0]
                roots.append(node)
            elif kind == "child":
                if not roots:
                    raise DataError(f"{path}: child before any root")
                node.tap = taps[1]
                roots[-1].children.append(node)
            elif kind == "leaf":
                if not roots or not roots[-1].children:
                    raise DataError(f"{path}: leaf before any child")
                node.tap = taps[2]
                roots[-1].children[-1].children.append(node)
            else:
                raise DataError(f"{path}: unknown node kind {kind!r}")
        return cls(taps, roots)  # type: ignore[arg-type]


def build_feature_tree(stats: "list[TraceStats]", n5: int = 5, n4: int = 5,
                       n3: int = 5) -> FeatureTree:
    """Assemble the consistent-filter tree from per-trace statistics.

    Root filters are ranked by log-summed map responses over all traces.
    Children are ranked by log-summed max path gradients over the traces
    where the parent is alive; a trace with a dead parent is skipped, a dead
    child under a live parent scores -inf.
    """
    if not stats:
        raise DataError("no traces to build a feature tree from")
    taps = stats[0].taps
    root_rows = np.stack([s.root_responses for s in stats])
    root_scores = log_sum_scores(root_rows)
    roots = []
    for f5 in top_filters(root_scores, n5):
        root = TreeNode(taps[0], f5, float(root_scores[f5]))
        live = [s for s in stats if s.root_responses[f5] > EPS_RESPONSE]
        child_rows = np.stack([s.child_grads(f5)[0] for s in live])
        child_scores = log_sum_scores(child_rows)
        for f4 in top_filters(child_scores, n4):
            child = TreeNode(taps[1], f4, float(child_scores[f4]))
            live2 = [s for s in live if s.child_grads(f5)[0][f4] > EPS_RESPONSE]
            grand_rows = np.stack([s.grand_grads(f5, f4)[0] for s in live2])
            grand_scores = log_sum_scores(grand_rows)
            for f3 in top_filters(grand_scores, n3):
                child.children.append(
                    TreeNode(taps[2], f3, float(grand_scores[f3])))
            root.children.append(child)
        roots.append(root)
    return FeatureTree(taps, roots)


class TraceStats:
    """Sufficient statistics of one trace for tree building.

    Root responses and per-root child gradients are computed eagerly; the
    grandchild expansions are computed on demand and memoized, since only a
    few (root, child) pairs survive ranking.
    """

    def __init__(self, trace: ActivationTrace,
                 taps: tuple[str, str, str] = ("conv-5", "conv-4", "conv-3")):
        self.taps = taps
        self._trace = trace
        self.root_responses = map_responses(trace, taps[0])
        n_root = self.root_responses.shape[0]
        self._child: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for f in range(n_root):
            if self.root_responses[f] > EPS_RESPONSE:
                unit = map_argmax_unit(trace, taps[0], f)
                self._child[f] = grad_responses(trace, unit, taps[1])
        self._grand: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def child_grads(self, f_root: int) -> tuple[np.ndarray, np.ndarray]:
        if f_root not in self._child:
            n = self._trace.output_at(self.taps[1]).shape[0]
            return np.zeros(n), np.full((n, 2), -1)
        return self._child[f_root]

    def grand_grads(self, f_root: int, f_child: int):
        key = (f_root, f_child)
        if key not in self._grand:
            vals, units = self.child_grads(f_root)
            n = self._trace.output_at(self.taps[2]).shape[0]
            if vals[f_child] <= EPS_RESPONSE:
                self._grand[key] = (np.zeros(n), np.full((n, 2), -1))
            else:
                u4 = UnitRef(self.taps[1], f_child,
                             int(units[f_child][0]), int(units[f_child][1]))
                self._grand[key] = grad_responses(
                    self._trace, u4, self.taps[2], scale=float(vals[f_child]))
        return self._grand[key]

    def release_trace(self) -> None:
        """Drop the trace reference once no more expansions are needed."""
        self._trace = None  # type: ignore[assignment]


# ---------------------------------------------------------------------------
# Localization
# ---------------------------------------------------------------------------

def localize_feature(trace: ActivationTrace, feature: HierFeature,
                     cloud: OrganizedPointCloud | None = None,
                     eps: float = EPS_RESPONSE, cutoff: float = 0.1,
                     depth_radius: int = 5,
                     mask: np.ndarray | None = None) -> FeatureObservation:
    """Descend a feature path in one trace and read its image footprint.

    The top filter is located at its activation argmax; each lower filter at
    the argmax of the path gradient, which also defines the feature response
    (chained max gradient of the lowest filter, or the activation itself for
    single-tap features). The image position is the magnitude-weighted
    centroid of the image gradient above `cutoff` of its peak; the 3D
    position reads the cloud at the nearest valid depth pixel, restricted to
    `mask` when given — a centroid hovering just past an object rim must
    grab the rim, not the table behind it.
    """
    order = {tap: i for i, tap in enumerate(trace.net.taps)}
    try:
        idxs = [order[tap] for tap, _ in feature.path]
    except KeyError as e:
        raise ConfigurationError(f"feature tap {e} not in network taps")
    if any(a <= b for a, b in zip(idxs, idxs[1:])):
        raise ConfigurationError(
            f"feature path must descend through taps, got {feature.key()}")

    tap0, f0 = feature.path[0]
    amax = trace.output_at(tap0)[f0].max()
    if amax <= eps:
        return dead_observation(feature)
    unit = map_argmax_unit(trace, tap0, f0)
    response = float(amax)
    scale = 1.0
    for tap, f in feature.path[1:]:
        vals, units = grad_responses(trace, unit, tap, scale=scale)
        if vals[f] <= eps:
            return dead_observation(feature)
        unit = UnitRef(tap, f, int(units[f][0]), int(units[f][1]))
        response = float(vals[f])
        scale = response

    grad = backward_single_path(trace, unit, target_tap=IMAGE)
    mag = np.abs(grad).sum(axis=0)
    peak = mag.max()
    if peak <= 0.0:
        return dead_observation(feature)
    keep = mag >= cutoff * peak
    weights = np.where(keep, mag, 0.0)
    total = weights.sum()
    rows = np.arange(mag.shape[0], dtype=np.float64)
    cols = np.arange(mag.shape[1], dtype=np.float64)
    cr = float((weights.sum(axis=1) @ rows) / total)
    cc = float((weights.sum(axis=0) @ cols) / total)
    pr = int(np.clip(round(cr), 0, mag.shape[0] - 1))
    pc = int(np.clip(round(cc), 0, mag.shape[1] - 1))
    position = None
    if cloud is not None:
        if cloud.shape != mag.shape:
            raise ConfigurationError(
                f"cloud shape {cloud.shape} != image shape {mag.shape}")
        hit = cloud.nearest_valid(pr, pc, radius=depth_radius, within=mask)
        if hit is not None:
            position = cloud.points[hit[0], hit[1]].copy()
    return FeatureObservation(feature, response, (cr, cc), (pr, pc), unit,
                              position)
