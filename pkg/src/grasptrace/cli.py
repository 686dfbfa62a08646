"""Command-line pipeline around the library.

Subcommands cover the full workflow: generate a synthetic dataset, train and
save grasp models, run the held-out accuracy sweep, evaluate clutter scenes,
compare selection strategies, draw prediction overlays, simulate the
two-stage pre-shape, and verify an externally converted weight bank against
its probe fixture.

Exit codes: 0 success, 2 configuration problems, 3 data problems,
4 prediction failures.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .controller import home_state, run_preshape
from .dataset import generate_dataset, load_dataset
from .errors import (ConfigurationError, DataError, GraspTraceError,
                     PredictionError)
from .evaluation import (compare_strategies, cross_validate, evaluate_clutter,
                         train_type_models)
from .grasp import (EFFECTORS, HIER_FEAT, STRATEGIES, GraspModel,
                    ObservationExtractor, learn_model, predict_grasp)
from .network import forward_pass, load_weights
from .reports import (emit_overlay, format_clutter_table, format_error_table,
                      save_potential_figure, write_report)
from .weightbank import get_desk_bank

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_PREDICTION = 4

PROBE_FILE = "probe.json"
PROBE_FORMAT = "grasptrace-probe"


def _parse_params(text: str) -> dict:
    try:
        n5, n4, n3, n = (int(v) for v in text.split(","))
    except ValueError:
        raise ConfigurationError(
            f"--params wants 'n5,n4,n3,n' integers, got {text!r}")
    return {"n5": n5, "n4": n4, "n3": n3, "n": n}


def _bank(args):
    if getattr(args, "weights", None):
        return load_weights(args.weights)
    return get_desk_bank()


def _extractor(args) -> ObservationExtractor:
    net, weights = _bank(args)
    return ObservationExtractor(net, weights)


def _records(args, want_clutter: bool | None = None):
    records = load_dataset(args.data)
    if want_clutter is None:
        return records
    picked = [r for r in records if r.clutter == want_clutter]
    if not picked:
        kind = "clutter" if want_clutter else "singulated"
        raise DataError(f"dataset {args.data} has no {kind} records")
    return picked


def _find_record(records, name: str):
    for rec in records:
        if rec.name == name:
            return rec
    raise DataError(f"no record named {name!r} "
                    f"(have e.g. {records[0].name!r})")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_gen_dataset(args) -> int:
    manifest = generate_dataset(args.out, n_instances=args.instances,
                                n_records=args.records,
                                n_clutter=args.clutter_scenes, seed=args.seed)
    print(f"wrote {manifest}")
    return EXIT_OK


def _cmd_train(args) -> int:
    extractor = _extractor(args)
    records = [r for r in _records(args, want_clutter=False)
               if r.object_type == args.type]
    if not records:
        raise DataError(f"no singulated records of type {args.type!r}")
    params = _parse_params(args.params)
    model = learn_model(extractor, records, strategy=args.strategy,
                        object_type=args.type, **params)
    model.save_text(args.out)
    n_feats = sum(len(v) for v in model.features.values())
    print(f"trained {args.strategy} model on {len(records)} records "
          f"({n_feats} features) -> {args.out}")
    return EXIT_OK


def _cmd_cross_validate(args) -> int:
    extractor = _extractor(args)
    records = _records(args, want_clutter=False)
    params = _parse_params(args.params)
    t0 = time.time()
    cv = cross_validate(extractor, records, strategy=args.strategy, **params)
    print(format_error_table(cv))
    print(f"elapsed: {time.time() - t0:.1f} s")
    if args.out:
        for path in write_report(args.out, cv=cv):
            print(f"wrote {path}")
    return EXIT_OK


def _cmd_eval_clutter(args) -> int:
    extractor = _extractor(args)
    train = _records(args, want_clutter=False)
    clutter = _records(args, want_clutter=True)
    params = _parse_params(args.params)
    models = train_type_models(extractor, train, strategy=args.strategy,
                               **params)
    result = evaluate_clutter(extractor, clutter, models)
    table = {args.strategy: result}
    print(format_clutter_table(table))
    if args.out:
        for path in write_report(args.out, clutter=table):
            print(f"wrote {path}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    extractor = _extractor(args)
    train = _records(args, want_clutter=False)
    clutter = _records(args, want_clutter=True)
    strategies = tuple(args.strategies.split(","))
    unknown = [s for s in strategies if s not in STRATEGIES]
    if unknown:
        raise ConfigurationError(f"unknown strategies {unknown}; "
                                 f"choose from {list(STRATEGIES)}")
    results = compare_strategies(extractor, train, clutter, strategies,
                                 **_parse_params(args.params))
    print(format_clutter_table(results))
    if args.out:
        for path in write_report(args.out, clutter=results):
            print(f"wrote {path}")
    return EXIT_OK


def _cmd_overlay(args) -> int:
    extractor = _extractor(args)
    record = _find_record(_records(args), args.record)
    model = GraspModel.load_text(args.model)
    prediction = predict_grasp(extractor, record, model)
    emit_overlay(record.image, prediction, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_run_preshape(args) -> int:
    extractor = _extractor(args)
    record = _find_record(_records(args), args.record)
    model = GraspModel.load_text(args.model)
    prediction = predict_grasp(extractor, record, model)
    state, log = run_preshape(home_state(), prediction)
    print(f"pre-shape status: {log.status} ({len(log.entries)} steps)")
    for eff, pos in (("hand", state.hand), ("thumb", state.thumb),
                     ("index", state.index)):
        print(f"  {eff}: {pos[0]:.4f} {pos[1]:.4f} {pos[2]:.4f}")
    for eff in EFFECTORS:
        err = np.linalg.norm(
            {EFFECTORS[0]: state.hand, EFFECTORS[1]: state.thumb,
             EFFECTORS[2]: state.index}[eff] - record.effectors[eff])
        print(f"  {eff} error vs annotation: {100 * err:.2f} cm")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        log.save_csv(out / "preshape.csv")
        save_potential_figure(log, out / "preshape.png")
        print(f"wrote {out / 'preshape.csv'}")
        print(f"wrote {out / 'preshape.png'}")
    return EXIT_OK


def _cmd_verify_probe(args) -> int:
    probe_dir = Path(args.probe)
    spec_path = probe_dir / PROBE_FILE
    if not spec_path.exists():
        raise DataError(f"no {PROBE_FILE} in {probe_dir}")
    fixture = json.loads(spec_path.read_text())
    if fixture.get("format") != PROBE_FORMAT:
        raise DataError(f"{spec_path}: not a probe fixture")
    net, weights = load_weights(probe_dir)
    image_info = fixture["image"]
    blob = (probe_dir / image_info["file"]).read_bytes()
    shape = (image_info["channels"], image_info["height"],
             image_info["width"])
    image = np.frombuffer(blob, dtype="<f4").reshape(shape).astype(np.float64)
    trace = forward_pass(net, weights, image)
    tol = args.tolerance
    worst = 0.0
    for tap, expect in fixture["taps"].items():
        acts = trace.output_at(tap)
        checksum = float(acts.sum())
        rel = abs(checksum - expect["checksum"]) / max(1.0,
                                                       abs(expect["checksum"]))
        if rel > tol:
            raise DataError(f"tap {tap}: checksum {checksum:.6f} != "
                            f"{expect['checksum']:.6f} (rel {rel:.2e})")
        for sample in expect["samples"]:
            got = float(acts[sample["f"], sample["row"], sample["col"]])
            err = abs(got - sample["value"])
            worst = max(worst, err)
            if err > tol:
                raise DataError(
                    f"tap {tap} unit (f={sample['f']}, r={sample['row']}, "
                    f"c={sample['col']}): {got:.6f} != {sample['value']:.6f}")
        print(f"tap {tap}: checksum ok, {len(expect['samples'])} samples ok")
    print(f"probe verified (worst sample error {worst:.2e})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grasptrace",
        description="grasp synthesis from traced CNN features")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, weights=True, params=True, out=None):
        if data:
            p.add_argument("--data", required=True,
                           help="dataset root (with manifest.txt)")
        if weights:
            p.add_argument("--weights",
                           help="weight manifest dir (default: bundled bank)")
        if params:
            p.add_argument("--params", default="5,5,5,15",
                           help="n5,n4,n3,n feature budget")
        if out is not None:
            p.add_argument("--out", required=out == "required",
                           help="output location")

    p = sub.add_parser("gen-dataset", help="render a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--instances", type=int, default=12)
    p.add_argument("--records", type=int, default=10)
    p.add_argument("--clutter-scenes", type=int, default=24)
    p.add_argument("--seed", type=int, default=20331)
    p.set_defaults(func=_cmd_gen_dataset)

    p = sub.add_parser("train", help="fit and save one grasp model")
    common(p, out="required")
    p.add_argument("--type", required=True, choices=("box", "cylinder"))
    p.add_argument("--strategy", default=HIER_FEAT, choices=STRATEGIES)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("cross-validate",
                       help="leave-one-instance-out accuracy")
    common(p, out="optional")
    p.add_argument("--strategy", default=HIER_FEAT, choices=STRATEGIES)
    p.set_defaults(func=_cmd_cross_validate)

    p = sub.add_parser("eval-clutter", help="clutter success for one strategy")
    common(p, out="optional")
    p.add_argument("--strategy", default=HIER_FEAT, choices=STRATEGIES)
    p.set_defaults(func=_cmd_eval_clutter)

    p = sub.add_parser("compare", help="clutter shootout across strategies")
    common(p, out="optional")
    p.add_argument("--strategies", default=",".join(STRATEGIES))
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("overlay", help="draw predicted grasp points")
    common(p, params=False, out="required")
    p.add_argument("--record", required=True)
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_overlay)

    p = sub.add_parser("run-preshape", help="simulate the two-stage reach")
    common(p, params=False, out="optional")
    p.add_argument("--record", required=True)
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_run_preshape)

    p = sub.add_parser("verify-probe",
                       help="check converted weights against their fixture")
    p.add_argument("--probe", required=True,
                   help="dir with manifest.txt and probe.json")
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.set_defaults(func=_cmd_verify_probe)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PredictionError as e:
        print(f"prediction error: {e}", file=sys.stderr)
        return EXIT_PREDICTION
    except GraspTraceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
