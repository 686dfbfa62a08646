"""Grasp point models: offsets from localized features to effector targets.

A model binds each end effector (hand frame, thumb tip, index tip) to a set
of features whose 3D offsets to that effector stay consistent across
training records. Prediction localizes the same features in a new scene and
averages the offset-shifted candidates, weighted by feature response.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DataError, PredictionError
from .features import (EPS_RESPONSE, FeatureObservation, FeatureTree,
                       HierFeature, build_feature_tree, grad_responses,
                       localize_feature, log_sum_scores, map_argmax_unit,
                       map_responses, top_filters)
from .network import NetworkSpec, UnitRef, WeightSet, forward_pass
from .segmentation import OrganizedPointCloud, object_mask, ransac_plane

log = logging.getLogger(__name__)

HAND_FRAME = "hand_frame"
THUMB_TIP = "thumb_tip"
INDEX_TIP = "index_tip"
EFFECTORS = (HAND_FRAME, THUMB_TIP, INDEX_TIP)

HIER_FEAT = "hier-feat"
BASELINE = "baseline"
INDV_FILTER = "indv-filter"
CONV5_FILTER = "conv5-filter"
CONV5_MAX = "conv5-max"
STRATEGIES = (HIER_FEAT, BASELINE, INDV_FILTER, CONV5_FILTER, CONV5_MAX)


@dataclass
class GraspRecord:
    """One captured scene with ground-truth effector positions (camera frame)."""

    name: str
    image: np.ndarray
    cloud: OrganizedPointCloud
    effectors: dict[str, np.ndarray]
    object_type: str = ""
    instance: str = ""
    clutter: bool = False

    def __post_init__(self):
        missing = [e for e in EFFECTORS if e not in self.effectors]
        if missing:
            raise DataError(f"record {self.name!r} missing effectors {missing}")


class ObservationExtractor:
    """Shared per-record computation: masks, traces, feature observations.

    Traces are expensive and big, so only the most recent one is kept;
    everything derived from them (segmentation masks, tree statistics,
    observations) is memoized by record name, which makes leave-one-out
    sweeps and strategy comparisons cheap after the first pass. Callers
    should group feature requests record by record to stay on the hot trace.
    """

    def __init__(self, net: NetworkSpec, weights: WeightSet, masked: bool = True,
                 ransac_iterations: int = 200, ransac_threshold: float = 0.005,
                 min_height: float = 0.01, cutoff: float = 0.1,
                 depth_radius: int = 5):
        self.net = net
        self.weights = weights
        self.masked = masked
        self.ransac_iterations = ransac_iterations
        self.ransac_threshold = ransac_threshold
        self.min_height = min_height
        self.cutoff = cutoff
        self.depth_radius = depth_radius
        self._masks: dict[str, np.ndarray] = {}
        self._tight: dict[str, np.ndarray] = {}
        self._obs: dict[tuple[str, str], FeatureObservation] = {}
        self._stats: dict[str, dict] = {}
        self._grand: dict[tuple[str, str, int, int], np.ndarray] = {}
        self._seen: dict[str, float] = {}
        self._hot_name: str | None = None
        self._hot_trace = None

    # -- per-record primitives ---------------------------------------------

    def _check_identity(self, record: GraspRecord) -> None:
        # Caches key on the record name; a second, different record under a
        # reused name would silently serve the first one's observations.
        fingerprint = float(record.image.sum())
        known = self._seen.setdefault(record.name, fingerprint)
        if known != fingerprint:
            raise ConfigurationError(
                f"two different records share the name {record.name!r}; "
                f"rename one before mixing them in one extractor")

    def _segment(self, record: GraspRecord) -> None:
        plane, _ = ransac_plane(record.cloud, self.ransac_iterations,
                                self.ransac_threshold, seed=0)
        self._masks[record.name] = object_mask(record.cloud, plane,
                                               self.min_height)
        # Undilated twin for depth reads: the dilated mask would let a
        # lookup near a rim land on the table ring it swallowed.
        self._tight[record.name] = object_mask(record.cloud, plane,
                                               self.min_height,
                                               dilate_radius=0)

    def mask_for(self, record: GraspRecord) -> np.ndarray:
        self._check_identity(record)
        if record.name not in self._masks:
            self._segment(record)
        return self._masks[record.name]

    def tight_mask_for(self, record: GraspRecord) -> np.ndarray:
        self._check_identity(record)
        if record.name not in self._tight:
            self._segment(record)
        return self._tight[record.name]

    def trace_for(self, record: GraspRecord):
        self._check_identity(record)
        if self._hot_name != record.name:
            mask = self.mask_for(record) if self.masked else None
            self._hot_trace = forward_pass(self.net, self.weights,
                                           record.image, mask=mask)
            self._hot_name = record.name
        return self._hot_trace

    def observe(self, record: GraspRecord,
                feature: HierFeature) -> FeatureObservation:
        self._check_identity(record)
        key = (record.name, feature.key())
        if key not in self._obs:
            mask = self.tight_mask_for(record) if self.masked else None
            self._obs[key] = localize_feature(
                self.trace_for(record), feature, cloud=record.cloud,
                cutoff=self.cutoff, depth_radius=self.depth_radius,
                mask=mask)
        return self._obs[key]

    # -- tree statistics (cached without retaining traces) ------------------

    def _record_stats(self, record: GraspRecord,
                      taps: tuple[str, str, str]) -> dict:
        self._check_identity(record)
        key = record.name
        cached = self._stats.get(key)
        if cached is not None and cached["taps"] == taps:
            return cached
        trace = self.trace_for(record)
        responses = {tap: map_responses(trace, tap) for tap in taps}
        n_root = responses[taps[0]].shape[0]
        n_child = responses[taps[1]].shape[0]
        child_vals = np.zeros((n_root, n_child))
        child_units = np.full((n_root, n_child, 2), -1)
        for f in range(n_root):
            if responses[taps[0]][f] > EPS_RESPONSE:
                unit = map_argmax_unit(trace, taps[0], f)
                child_vals[f], child_units[f] = grad_responses(
                    trace, unit, taps[1])
        stats = {"taps": taps, "responses": responses,
                 "child_vals": child_vals, "child_units": child_units}
        self._stats[key] = stats
        return stats

    def _grand_vals(self, record: GraspRecord, taps: tuple[str, str, str],
                    f_root: int, f_child: int) -> np.ndarray:
        key = (record.name, taps[0], f_root, f_child)
        if key not in self._grand:
            stats = self._record_stats(record, taps)
            val = stats["child_vals"][f_root, f_child]
            if val <= EPS_RESPONSE:
                vals = np.zeros(stats["responses"][taps[2]].shape[0])
            else:
                r, c = stats["child_units"][f_root, f_child]
                unit = UnitRef(taps[1], f_child, int(r), int(c))
                vals, _ = grad_responses(self.trace_for(record), unit,
                                         taps[2], scale=float(val))
            self._grand[key] = vals
        return self._grand[key]

    def build_tree(self, records: list[GraspRecord], n5: int = 5, n4: int = 5,
                   n3: int = 5,
                   taps: tuple[str, str, str] = ("conv-5", "conv-4", "conv-3"),
                   ) -> FeatureTree:
        views = [_StatsView(self, rec, taps) for rec in records]
        # Warm the eager statistics record by record to stay on one trace.
        for rec in records:
            self._record_stats(rec, taps)
        return build_feature_tree(views, n5=n5, n4=n4, n3=n3)

    def consistent_filters(self, records: list[GraspRecord], tap: str, n: int,
                           taps: tuple[str, str, str]) -> list[int]:
        """Top filters of one tap by log-summed map responses."""
        rows = np.stack([self._record_stats(rec, taps)["responses"][tap]
                         for rec in records])
        return top_filters(log_sum_scores(rows), n)


class _StatsView:
    """TraceStats-shaped adapter over the extractor's cached statistics."""

    def __init__(self, extractor: ObservationExtractor, record: GraspRecord,
                 taps: tuple[str, str, str]):
        self._x = extractor
        self._record = record
        self.taps = taps

    @property
    def root_responses(self) -> np.ndarray:
        return self._x._record_stats(self._record, self.taps)["responses"][
            self.taps[0]]

    def child_grads(self, f_root: int):
        stats = self._x._record_stats(self._record, self.taps)
        return stats["child_vals"][f_root], stats["child_units"][f_root]

    def grand_grads(self, f_root: int, f_child: int):
        return self._x._grand_vals(self._record, self.taps, f_root,
                                   f_child), None


# ---------------------------------------------------------------------------
# Model structure
# ---------------------------------------------------------------------------

@dataclass
class ModelFeature:
    """One feature bound to one effector, with its training offsets."""

    feature: HierFeature
    offsets: np.ndarray    # (k, 3) effector minus feature position
    responses: np.ndarray  # (k,) training responses

    @property
    def variance(self) -> float:
        return float(np.trace(np.cov(self.offsets.T, ddof=0).reshape(3, 3)))

    @property
    def mean_offset(self) -> np.ndarray:
        return self.offsets.mean(axis=0)


@dataclass
class GraspModel:
    strategy: str
    object_type: str
    taps: tuple[str, str, str]
    n: int
    features: dict[str, list[ModelFeature]]
    root_filter: int | None = None

    MAGIC = "graspmodel v1"

    def save_text(self, path) -> None:
        lines = [self.MAGIC, f"strategy {self.strategy}",
                 f"object_type {self.object_type}",
                 "taps " + " ".join(self.taps), f"n {self.n}"]
        if self.root_filter is not None:
            lines.append(f"root {self.root_filter}")
        for eff in EFFECTORS:
            lines.append(f"effector {eff}")
            for mf in self.features.get(eff, []):
                lines.append(f"feature {mf.feature.key()}")
                for off, resp in zip(mf.offsets, mf.responses):
                    lines.append("offset %.9g %.9g %.9g response %.9g"
                                 % (off[0], off[1], off[2], resp))
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")

    @classmethod
    def load_text(cls, path) -> "GraspModel":
        with open(path) as f:
            lines = [ln.strip() for ln in f if ln.strip()]
        if not lines or lines[0] != cls.MAGIC:
            raise DataError(f"{path}: not a {cls.MAGIC!r} file")
        head = {"strategy": None, "object_type": "", "n": None, "root": None}
        taps: tuple[str, str, str] | None = None
        features: dict[str, list[ModelFeature]] = {e: [] for e in EFFECTORS}
        eff = None
        cur: list[tuple[HierFeature, list, list]] = []

        def flush():
            if eff is None:
                return
            for feat, offs, resps in cur:
                features[eff].append(ModelFeature(
                    feat, np.array(offs, dtype=float).reshape(-1, 3),
                    np.array(resps, dtype=float)))
            cur.clear()

        for line in lines[1:]:
            kind, _, rest = line.partition(" ")
            if kind in ("strategy", "object_type"):
                head[kind] = rest
            elif kind == "n":
                head["n"] = int(rest)
            elif kind == "root":
                head["root"] = int(rest)
            elif kind == "taps":
                parts = tuple(rest.split())
                if len(parts) != 3:
                    raise DataError(f"{path}: expected three taps, got {rest!r}")
                taps = parts  # type: ignore[assignment]
            elif kind == "effector":
                flush()
                if rest not in EFFECTORS:
                    raise DataError(f"{path}: unknown effector {rest!r}")
                eff = rest
            elif kind == "feature":
                if eff is None:
                    raise DataError(f"{path}: feature before any effector")
                cur.append((HierFeature.parse(rest), [], []))
            elif kind == "offset":
                if not cur:
                    raise DataError(f"{path}: offset before any feature")
                toks = rest.split()
                if len(toks) != 5 or toks[3] != "response":
                    raise DataError(f"{path}: malformed offset line: {line}")
                cur[-1][1].append([float(t) for t in toks[:3]])
                cur[-1][2].append(float(toks[4]))
            else:
                raise DataError(f"{path}: unknown model line: {line}")
        flush()
        if head["strategy"] not in STRATEGIES:
            raise DataError(f"{path}: unknown strategy {head['strategy']!r}")
        if taps is None or head["n"] is None:
            raise DataError(f"{path}: incomplete model header")
        return cls(head["strategy"], head["object_type"], taps, head["n"],
                   features, head["root"])


# ---------------------------------------------------------------------------
# Learning
# ---------------------------------------------------------------------------

def _collect_observations(extractor: ObservationExtractor,
                          records: list[GraspRecord],
                          features: list[HierFeature]) -> None:
    """Warm the observation cache record-major (one trace per record)."""
    for rec in records:
        for feat in features:
            extractor.observe(rec, feat)


def _model_feature(extractor: ObservationExtractor,
                   records: list[GraspRecord], feature: HierFeature,
                   effector: str, min_examples: int = 2) -> ModelFeature | None:
    offsets, responses = [], []
    for rec in records:
        obs = extractor.observe(rec, feature)
        if not obs.usable:
            continue
        offsets.append(rec.effectors[effector] - obs.position)
        responses.append(obs.response)
    if len(offsets) < min_examples:
        return None
    return ModelFeature(feature, np.array(offsets), np.array(responses))


def _select_lowest_variance(candidates: list[ModelFeature],
                            n: int) -> list[ModelFeature]:
    return sorted(candidates, key=lambda mf: mf.variance)[:n]


def _effector_tap_features(tree: FeatureTree, root) -> dict[str, list]:
    return {HAND_FRAME: tree.pair_features(root),
            THUMB_TIP: tree.triple_features(root),
            INDEX_TIP: tree.triple_features(root)}


def learn_model(extractor: ObservationExtractor, records: list[GraspRecord],
                tree: FeatureTree | None = None, n: int = 15,
                strategy: str = HIER_FEAT, n5: int = 5, n4: int = 5,
                n3: int = 5,
                taps: tuple[str, str, str] = ("conv-5", "conv-4", "conv-3"),
                object_type: str = "") -> GraspModel:
    """Fit one grasp model from training records.

    hier-feat picks, per effector, the lowest-variance feature tuples that
    share the single best parent filter of the root tap; the flat strategies
    swap in individually ranked filters at various layers as controls.
    """
    if strategy not in STRATEGIES:
        raise ConfigurationError(f"unknown strategy {strategy!r}")
    if not records:
        raise DataError("no training records")
    if strategy in (HIER_FEAT, BASELINE):
        if tree is None:
            tree = extractor.build_tree(records, n5=n5, n4=n4, n3=n3, taps=taps)
        model = _learn_hier(extractor, records, tree, n, object_type)
        if strategy == BASELINE:
            model = _strip_to_baseline(extractor, records, model)
        return model
    if strategy == INDV_FILTER:
        pools = {
            HAND_FRAME: [HierFeature(((taps[1], f),)) for f in
                         extractor.consistent_filters(records, taps[1],
                                                      n5 * n4, taps)],
            THUMB_TIP: [HierFeature(((taps[2], f),)) for f in
                        extractor.consistent_filters(records, taps[2],
                                                     n5 * n4 * n3, taps)],
        }
        pools[INDEX_TIP] = pools[THUMB_TIP]
    elif strategy == CONV5_FILTER:
        pool = [HierFeature(((taps[0], f),)) for f in
                extractor.consistent_filters(records, taps[0], n5 * n4, taps)]
        pools = {eff: pool for eff in EFFECTORS}
    else:  # CONV5_MAX
        pool = [HierFeature(((taps[0], f),)) for f in
                extractor.consistent_filters(records, taps[0], n5, taps)]
        pools = {eff: pool for eff in EFFECTORS}
    all_feats = sorted({f for fs in pools.values() for f in fs},
                       key=lambda f: f.key())
    _collect_observations(extractor, records, all_feats)
    features: dict[str, list[ModelFeature]] = {}
    for eff in EFFECTORS:
        cands = [mf for feat in pools[eff]
                 if (mf := _model_feature(extractor, records, feat, eff))]
        features[eff] = _select_lowest_variance(cands, n)
        if not features[eff]:
            raise DataError(
                f"strategy {strategy!r}: no usable feature for {eff}")
    return GraspModel(strategy, object_type, taps, n, features)


def _learn_hier(extractor: ObservationExtractor, records: list[GraspRecord],
                tree: FeatureTree, n: int, object_type: str) -> GraspModel:
    all_feats = [f for root in tree.roots
                 for fs in _effector_tap_features(tree, root).values()
                 for f in fs]
    seen: set[str] = set()
    uniq = [f for f in all_feats
            if f.key() not in seen and not seen.add(f.key())]
    _collect_observations(extractor, records, uniq)
    best = None
    for root in tree.roots:
        selected: dict[str, list[ModelFeature]] = {}
        score = 0.0
        ok = True
        for eff, feats in _effector_tap_features(tree, root).items():
            cands = [mf for feat in feats
                     if (mf := _model_feature(extractor, records, feat, eff))]
            picked = _select_lowest_variance(cands, n)
            if not picked:
                ok = False
                break
            selected[eff] = picked
            score += float(np.mean([mf.variance for mf in picked]))
        if not ok:
            continue
        if best is None or score < best[0]:
            best = (score, root.filter, selected)
    if best is None:
        raise DataError("no root filter yields usable features for every "
                        "effector")
    _, root_filter, selected = best
    return GraspModel(HIER_FEAT, object_type, tree.taps, n, selected,
                      root_filter)


def _strip_to_baseline(extractor: ObservationExtractor,
                       records: list[GraspRecord],
                       model: GraspModel) -> GraspModel:
    """Same filters as the hierarchy picked, but located on their own maps.

    Each selected tuple is cut down to its lowest (tap, filter) and re-learned
    as a standalone feature; what the hierarchy bought (path-guided
    localization) is exactly what this control removes.
    """
    features: dict[str, list[ModelFeature]] = {}
    flat: dict[str, list[HierFeature]] = {}
    for eff, mfs in model.features.items():
        seen: set[str] = set()
        feats = []
        for mf in mfs:
            single = HierFeature((mf.feature.lowest,))
            if single.key() not in seen:
                seen.add(single.key())
                feats.append(single)
        flat[eff] = feats
    all_feats = sorted({f for fs in flat.values() for f in fs},
                       key=lambda f: f.key())
    _collect_observations(extractor, records, all_feats)
    for eff, feats in flat.items():
        cands = [mf for feat in feats
                 if (mf := _model_feature(extractor, records, feat, eff))]
        if not cands:
            raise DataError(f"baseline: no usable feature for {eff}")
        features[eff] = cands
    return GraspModel(BASELINE, model.object_type, model.taps, model.n,
                      features, model.root_filter)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

@dataclass
class PredictedGrasp:
    effector: str
    position: np.ndarray
    weight: float
    candidates: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    candidate_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))


def predict_grasp(extractor: ObservationExtractor, record: GraspRecord,
                  model: GraspModel,
                  per_example: bool = True) -> dict[str, PredictedGrasp]:
    """Locate the model's features in one scene and vote for each effector.

    Every training example of every responding feature contributes one
    candidate (feature position + stored offset), weighted by the feature's
    response in this scene; with per_example=False each feature casts a
    single mean-offset candidate instead.
    """
    out: dict[str, PredictedGrasp] = {}
    for eff in EFFECTORS:
        mfs = model.features.get(eff, [])
        observed = [(mf, extractor.observe(record, mf.feature)) for mf in mfs]
        usable = [(mf, obs) for mf, obs in observed if obs.usable]
        if model.strategy == CONV5_MAX and usable:
            usable = [max(usable, key=lambda t: t[1].response)]
        points, weights = [], []
        for mf, obs in usable:
            if per_example:
                points.append(obs.position[None, :] + mf.offsets)
                weights.append(np.full(len(mf.offsets), obs.response))
            else:
                points.append(obs.position[None, :] + mf.mean_offset[None, :])
                weights.append(np.array([obs.response]))
        if not points:
            raise PredictionError(
                f"no feature for {eff} responded in {record.name!r}",
                effector=eff)
        pts = np.concatenate(points)
        w = np.concatenate(weights)
        total = float(w.sum())
        if total <= 0.0:
            raise PredictionError(
                f"all candidate weights are zero for {eff} in {record.name!r}",
                effector=eff)
        out[eff] = PredictedGrasp(eff, (pts * w[:, None]).sum(0) / total,
                                  total, pts, w)
    return out
