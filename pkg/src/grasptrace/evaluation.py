"""Experiment drivers: held-out accuracy, clutter trials, strategy shootouts.

All distances are metres. Records are grouped by instance id; accuracy is
measured leave-one-instance-out within each object type, so every test pose
comes from an object the model has never seen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, PredictionError
from .grasp import (EFFECTORS, HIER_FEAT, STRATEGIES, GraspModel, GraspRecord,
                    ObservationExtractor, learn_model, predict_grasp)

SUCCESS_TIP = 0.05    # finger tip must land this close in clutter
SUCCESS_HAND = 0.10   # hand frame gets twice the slack


def _by_instance(records: list[GraspRecord]) -> dict[str, list[GraspRecord]]:
    groups: dict[str, list[GraspRecord]] = {}
    for rec in records:
        groups.setdefault(rec.instance, []).append(rec)
    return groups


def _types_of(records) -> set[str]:
    return {rec.object_type for rec in records}


# ---------------------------------------------------------------------------
# Leave-one-instance-out accuracy
# ---------------------------------------------------------------------------

@dataclass
class FoldResult:
    """Errors for one held-out instance (metres, one row per test record)."""

    instance: str
    object_type: str
    errors: dict[str, np.ndarray]
    failures: list[str] = field(default_factory=list)

    def mean_error(self, effector: str) -> float:
        return float(self.errors[effector].mean())


@dataclass
class CrossValResult:
    folds: list[FoldResult]

    def pooled(self, effector: str, object_type: str | None = None
               ) -> np.ndarray:
        rows = [f.errors[effector] for f in self.folds
                if object_type in (None, f.object_type)]
        return np.concatenate(rows) if rows else np.zeros(0)

    def mean_error(self, effector: str, object_type: str | None = None
                   ) -> float:
        pooled = self.pooled(effector, object_type)
        return float(pooled.mean()) if pooled.size else float("nan")

    @property
    def failure_count(self) -> int:
        return sum(len(f.failures) for f in self.folds)


def cross_validate(extractor: ObservationExtractor,
                   records: list[GraspRecord],
                   strategy: str = HIER_FEAT,
                   n: int = 15, n5: int = 5, n4: int = 5, n3: int = 5
                   ) -> CrossValResult:
    """Hold out one instance at a time; train on the rest of its type."""
    groups = _by_instance(records)
    if len(groups) < 2:
        raise DataError("cross-validation needs at least two instances")
    folds = []
    for instance in sorted(groups):
        test = groups[instance]
        object_type = test[0].object_type
        train = [r for r in records
                 if r.instance != instance and r.object_type == object_type]
        if not train:
            raise DataError(f"no training records share type with {instance!r}")
        model = learn_model(extractor, train, strategy=strategy,
                            n=n, n5=n5, n4=n4, n3=n3, object_type=object_type)
        errors = {eff: [] for eff in EFFECTORS}
        failures = []
        for rec in test:
            try:
                pred = predict_grasp(extractor, rec, model)
            except PredictionError:
                failures.append(rec.name)
                continue
            for eff in EFFECTORS:
                errors[eff].append(np.linalg.norm(pred[eff].position
                                                  - rec.effectors[eff]))
        folds.append(FoldResult(instance, object_type,
                                {e: np.array(v) for e, v in errors.items()},
                                failures))
    return CrossValResult(folds)


# ---------------------------------------------------------------------------
# Clutter trials
# ---------------------------------------------------------------------------

@dataclass
class TrialOutcome:
    record: str
    object_type: str
    errors: dict[str, float]        # empty when prediction failed outright
    success: bool

    @property
    def failed(self) -> bool:
        return not self.errors


@dataclass
class ClutterResult:
    outcomes: list[TrialOutcome]

    @property
    def successes(self) -> int:
        return sum(o.success for o in self.outcomes)

    def __len__(self) -> int:
        return len(self.outcomes)


def train_type_models(extractor: ObservationExtractor,
                      records: list[GraspRecord],
                      strategy: str = HIER_FEAT,
                      n: int = 15, n5: int = 5, n4: int = 5, n3: int = 5
                      ) -> dict[str, GraspModel]:
    """One model per object type present in the training records."""
    models = {}
    for object_type in sorted(_types_of(records)):
        train = [r for r in records if r.object_type == object_type]
        models[object_type] = learn_model(extractor, train, strategy=strategy,
                                          n=n, n5=n5, n4=n4, n3=n3,
                                          object_type=object_type)
    return models


def evaluate_clutter(extractor: ObservationExtractor,
                     records: list[GraspRecord],
                     models: dict[str, GraspModel],
                     tip_tolerance: float = SUCCESS_TIP,
                     hand_tolerance: float = SUCCESS_HAND) -> ClutterResult:
    """Predict the target grasp in each clutter scene with its type's model.

    A trial succeeds when both finger tips land within `tip_tolerance` of
    the demonstrated grasp and the hand frame within `hand_tolerance`.
    """
    outcomes = []
    for rec in records:
        model = models.get(rec.object_type)
        if model is None:
            raise DataError(f"no model for object type {rec.object_type!r}")
        try:
            pred = predict_grasp(extractor, rec, model)
        except PredictionError:
            outcomes.append(TrialOutcome(rec.name, rec.object_type, {}, False))
            continue
        errors = {eff: float(np.linalg.norm(pred[eff].position
                                            - rec.effectors[eff]))
                  for eff in EFFECTORS}
        tips_ok = all(errors[eff] <= tip_tolerance
                      for eff in EFFECTORS if eff.endswith("_tip"))
        hand_ok = all(errors[eff] <= hand_tolerance
                      for eff in EFFECTORS if not eff.endswith("_tip"))
        outcomes.append(TrialOutcome(rec.name, rec.object_type, errors,
                                     tips_ok and hand_ok))
    return ClutterResult(outcomes)


def compare_strategies(extractor: ObservationExtractor,
                       train_records: list[GraspRecord],
                       clutter_records: list[GraspRecord],
                       strategies: tuple[str, ...] = STRATEGIES,
                       tip_tolerance: float = SUCCESS_TIP,
                       hand_tolerance: float = SUCCESS_HAND,
                       n: int = 15, n5: int = 5, n4: int = 5, n3: int = 5
                       ) -> dict[str, ClutterResult]:
    """Clutter success of each feature-selection strategy, same scenes."""
    results = {}
    for strategy in strategies:
        models = train_type_models(extractor, train_records, strategy,
                                   n=n, n5=n5, n4=n4, n3=n3)
        results[strategy] = evaluate_clutter(extractor, clutter_records,
                                             models, tip_tolerance,
                                             hand_tolerance)
    return results
