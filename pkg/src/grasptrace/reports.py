"""Result tables, overlay images, and figures for the evaluation harness.

Tables come in two flavors per result: a machine-readable CSV and a plain
text rendering. Figures are written with the Agg backend so reports build
headless; matplotlib is imported lazily to keep library imports light.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .controller import ControllerLog
from .dataset import save_image_ppm
from .errors import DataError
from .evaluation import ClutterResult, CrossValResult
from .grasp import EFFECTORS, HAND_FRAME, INDEX_TIP, THUMB_TIP, PredictedGrasp
from .scene import CameraModel

EFFECTOR_COLORS = {HAND_FRAME: (1.0, 0.0, 0.0),
                   THUMB_TIP: (0.0, 1.0, 0.0),
                   INDEX_TIP: (0.0, 0.0, 1.0)}
MARKER_HALF = 2          # grasp-point marker: (2h+1) x (2h+1) filled square
CANDIDATE_DIM = 0.5      # candidate dots drawn at half intensity


def _fmt(x: float) -> str:
    return "%.4f" % x


# ---------------------------------------------------------------------------
# Accuracy tables
# ---------------------------------------------------------------------------

def error_rows(cv: CrossValResult) -> list[dict]:
    """One row per fold plus per-type and overall averages (metres)."""
    rows = []
    for fold in cv.folds:
        row = {"instance": fold.instance, "type": fold.object_type}
        for eff in EFFECTORS:
            row[eff] = fold.mean_error(eff)
        rows.append(row)
    types = sorted({f.object_type for f in cv.folds})
    for object_type in types + [None]:
        row = {"instance": f"average/{object_type or 'all'}",
               "type": object_type or "all"}
        for eff in EFFECTORS:
            row[eff] = cv.mean_error(eff, object_type)
        rows.append(row)
    return rows


def save_error_csv(cv: CrossValResult, path) -> None:
    lines = ["instance,type," + ",".join(EFFECTORS)]
    for row in error_rows(cv):
        lines.append(",".join([row["instance"], row["type"]]
                              + [_fmt(row[e]) for e in EFFECTORS]))
    Path(path).write_text("\n".join(lines) + "\n")


def format_error_table(cv: CrossValResult) -> str:
    rows = error_rows(cv)
    width = max(len(r["instance"]) for r in rows) + 2
    head = "mean position error (m), leave-one-instance-out"
    lines = [head, "instance".ljust(width)
             + "".join(e.rjust(12) for e in EFFECTORS)]
    for row in rows:
        lines.append(row["instance"].ljust(width)
                     + "".join(_fmt(row[e]).rjust(12) for e in EFFECTORS))
    if cv.failure_count:
        lines.append(f"prediction failures: {cv.failure_count}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Clutter tables
# ---------------------------------------------------------------------------

def save_clutter_csv(results: dict[str, ClutterResult], path) -> None:
    lines = ["strategy,record,type,success," + ",".join(EFFECTORS)]
    for strategy in results:
        for o in results[strategy].outcomes:
            errs = [(_fmt(o.errors[e]) if o.errors else "") for e in EFFECTORS]
            lines.append(",".join([strategy, o.record, o.object_type,
                                   str(int(o.success))] + errs))
    Path(path).write_text("\n".join(lines) + "\n")


def format_clutter_table(results: dict[str, ClutterResult]) -> str:
    lines = ["cluttered-scene grasp successes"]
    width = max(len(s) for s in results) + 2
    for strategy, res in results.items():
        lines.append(f"{strategy.ljust(width)}{res.successes:3d} /{len(res):3d}"
                     f"   failures: {len(res) - res.successes}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Overlay images
# ---------------------------------------------------------------------------

def _paint(image: np.ndarray, row: float, col: float, color, half: int
           ) -> None:
    h, w = image.shape[1:]
    r, c = int(round(row)), int(round(col))
    r0, r1 = max(0, r - half), min(h, r + half + 1)
    c0, c1 = max(0, c - half), min(w, c + half + 1)
    if r0 < r1 and c0 < c1:
        image[:, r0:r1, c0:c1] = np.asarray(color, dtype=float)[:, None, None]


def emit_overlay(image: np.ndarray,
                 prediction: dict[str, PredictedGrasp], path,
                 camera: CameraModel | None = None) -> np.ndarray:
    """Draw candidate dots and grasp-point markers onto a copy of the image.

    Red marks the hand frame, green the thumb tip, blue the index tip;
    candidate positions are single half-intensity pixels, predicted grasp
    points filled squares. Returns the drawn image (also written to `path`
    as a PPM when `path` is not None).
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"expected (3, h, w) image, got {image.shape}")
    camera = camera or CameraModel()
    out = image.copy()
    for eff in EFFECTORS:
        pred = prediction[eff]
        color = EFFECTOR_COLORS[eff]
        dim = tuple(CANDIDATE_DIM * v for v in color)
        if len(pred.candidates):
            for row, col in camera.project(pred.candidates):
                _paint(out, row, col, dim, 0)
        row, col = camera.project(pred.position)[0]
        _paint(out, row, col, color, MARKER_HALF)
    if path is not None:
        save_image_ppm(path, out)
    return out


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def _plt():
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt
    return plt


def save_error_figure(cv: CrossValResult, path) -> None:
    """Grouped bars: mean error per effector, split by object type."""
    plt = _plt()
    types = sorted({f.object_type for f in cv.folds})
    x = np.arange(len(EFFECTORS), dtype=float)
    width = 0.8 / max(1, len(types))
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, object_type in enumerate(types):
        means = [100 * cv.mean_error(e, object_type) for e in EFFECTORS]
        ax.bar(x + i * width, means, width, label=object_type)
    ax.set_xticks(x + width * (len(types) - 1) / 2)
    ax.set_xticklabels([e.replace("_", " ") for e in EFFECTORS])
    ax.set_ylabel("mean error (cm)")
    ax.set_title("held-out grasp point error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_clutter_figure(results: dict[str, ClutterResult], path) -> None:
    plt = _plt()
    names = list(results)
    succ = [results[s].successes for s in names]
    total = max((len(results[s]) for s in names), default=0)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(np.arange(len(names)), succ, color="#4878a8")
    ax.set_xticks(np.arange(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel(f"successes (of {total})")
    ax.set_ylim(0, total)
    ax.set_title("cluttered-scene success by strategy")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_potential_figure(log: ControllerLog, path) -> None:
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    stages = sorted({e.stage for e in log.entries},
                    key=lambda s: [e.stage for e in log.entries].index(s))
    offset = 0
    for stage in stages:
        entries = log.stage_entries(stage)
        xs = offset + np.arange(len(entries))
        ax.semilogy(xs, np.maximum([e.phi for e in entries], 1e-12),
                    marker=".", label=stage)
        offset += len(entries)
    ax.set_xlabel("iteration")
    ax.set_ylabel("potential (m^2)")
    ax.set_title(f"pre-shape descent ({log.status})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Bundled report
# ---------------------------------------------------------------------------

def write_report(out_dir, cv: CrossValResult | None = None,
                 clutter: dict[str, ClutterResult] | None = None,
                 preshape_log: ControllerLog | None = None) -> list[Path]:
    """Write every available table (CSV + txt) and figure; return the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    def emit(name, writer):
        target = out_dir / name
        writer(target)
        written.append(target)

    if cv is not None:
        emit("errors.csv", lambda p: save_error_csv(cv, p))
        emit("errors.txt",
             lambda p: Path(p).write_text(format_error_table(cv) + "\n"))
        emit("errors.png", lambda p: save_error_figure(cv, p))
    if clutter is not None:
        emit("clutter.csv", lambda p: save_clutter_csv(clutter, p))
        emit("clutter.txt",
             lambda p: Path(p).write_text(format_clutter_table(clutter) + "\n"))
        emit("clutter.png", lambda p: save_clutter_figure(clutter, p))
    if preshape_log is not None:
        emit("preshape.csv", lambda p: preshape_log.save_csv(p))
        emit("preshape.png", lambda p: save_potential_figure(preshape_log, p))
    return written
