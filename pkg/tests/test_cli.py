"""End-to-end runs of the command-line entry point (in-process)."""
import json

import numpy as np
import pytest

from grasptrace import cli
from grasptrace.errors import PredictionError
from grasptrace.grasp import GraspModel
from grasptrace.network import forward_pass, save_weights
from grasptrace.weightbank import get_desk_bank

BUDGET = ["--params", "3,3,3,6"]


@pytest.fixture(scope="module")
def trained_model(tiny_dataset_root, tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "box.model"
    rc = cli.main(["train", "--data", str(tiny_dataset_root),
                   "--type", "box", "--out", str(path)] + BUDGET)
    assert rc == 0
    return path


@pytest.fixture(scope="module")
def probe_dir(tmp_path_factory):
    """A fixture directory in the converter's output shape."""
    out = tmp_path_factory.mktemp("probe")
    net, weights = get_desk_bank()
    save_weights(out, net, weights)
    rng = np.random.default_rng(11)
    image = rng.random((3, 227, 227)).astype("<f4")
    image.tofile(out / "probe_image.bin")
    trace = forward_pass(net, weights, image.astype(np.float64))
    taps = {}
    for tap in net.taps:
        acts = trace.output_at(tap)
        idx = rng.integers(0, np.array(acts.shape), size=(4, 3))
        taps[tap] = {
            "checksum": float(acts.sum()),
            "samples": [{"f": int(f), "row": int(r), "col": int(c),
                         "value": float(acts[f, r, c])}
                        for f, r, c in idx],
        }
    (out / "probe.json").write_text(json.dumps({
        "format": "grasptrace-probe", "version": 1,
        "image": {"file": "probe_image.bin", "height": 227, "width": 227,
                  "channels": 3, "dtype": "float32"},
        "taps": taps}))
    return out


def test_train_writes_loadable_model(trained_model):
    model = GraspModel.load_text(trained_model)
    assert model.strategy == "hier-feat"
    assert model.object_type == "box"


def test_overlay_deterministic_bytes(tiny_dataset_root, trained_model,
                                     tmp_path):
    argv = ["overlay", "--data", str(tiny_dataset_root),
            "--record", "box-00-r00", "--model", str(trained_model)]
    assert cli.main(argv + ["--out", str(tmp_path / "a.ppm")]) == 0
    assert cli.main(argv + ["--out", str(tmp_path / "b.ppm")]) == 0
    a = (tmp_path / "a.ppm").read_bytes()
    assert a == (tmp_path / "b.ppm").read_bytes()
    assert a.startswith(b"P6")


def test_run_preshape_writes_log_and_figure(tiny_dataset_root, trained_model,
                                            tmp_path, capsys):
    rc = cli.main(["run-preshape", "--data", str(tiny_dataset_root),
                   "--record", "box-00-r01", "--model", str(trained_model),
                   "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "pre-shape status: converged" in out
    header = (tmp_path / "preshape.csv").read_text().splitlines()[0]
    assert header.startswith("stage,iteration,phi")
    assert (tmp_path / "preshape.png").read_bytes()[:4] == b"\x89PNG"


def test_cross_validate_writes_report(tiny_dataset_root, tmp_path, capsys):
    rc = cli.main(["cross-validate", "--data", str(tiny_dataset_root),
                   "--out", str(tmp_path)] + BUDGET)
    assert rc == 0
    assert "average/all" in capsys.readouterr().out
    for name in ("errors.csv", "errors.txt", "errors.png"):
        assert (tmp_path / name).exists()


def test_eval_clutter_reports_successes(tiny_dataset_root, tmp_path, capsys):
    rc = cli.main(["eval-clutter", "--data", str(tiny_dataset_root),
                   "--out", str(tmp_path)] + BUDGET)
    assert rc == 0
    assert "cluttered-scene grasp successes" in capsys.readouterr().out
    assert (tmp_path / "clutter.csv").exists()


def test_config_error_exit_code(tiny_dataset_root, tmp_path):
    rc = cli.main(["train", "--data", str(tiny_dataset_root), "--type", "box",
                   "--out", str(tmp_path / "m"), "--params", "nope"])
    assert rc == cli.EXIT_CONFIG


def test_data_error_exit_codes(tmp_path, tiny_dataset_root, trained_model):
    assert cli.main(["cross-validate", "--data", str(tmp_path / "missing")]
                    ) == cli.EXIT_DATA
    assert cli.main(["overlay", "--data", str(tiny_dataset_root),
                     "--record", "no-such", "--model", str(trained_model),
                     "--out", str(tmp_path / "x.ppm")]) == cli.EXIT_DATA


def test_prediction_error_exit_code(tiny_dataset_root, trained_model,
                                    tmp_path, monkeypatch):
    def boom(*args, **kwargs):
        raise PredictionError("nothing responded")

    monkeypatch.setattr(cli, "predict_grasp", boom)
    rc = cli.main(["overlay", "--data", str(tiny_dataset_root),
                   "--record", "box-00-r00", "--model", str(trained_model),
                   "--out", str(tmp_path / "x.ppm")])
    assert rc == cli.EXIT_PREDICTION


def test_verify_probe_accepts_matching_fixture(probe_dir, capsys):
    assert cli.main(["verify-probe", "--probe", str(probe_dir)]) == 0
    assert "probe verified" in capsys.readouterr().out


def test_verify_probe_rejects_corrupted_value(probe_dir, tmp_path):
    fixture = json.loads((probe_dir / "probe.json").read_text())
    fixture["taps"]["conv-5"]["samples"][0]["value"] += 0.5
    broken = tmp_path / "broken"
    broken.mkdir()
    for f in probe_dir.iterdir():
        (broken / f.name).write_bytes(f.read_bytes())
    (broken / "probe.json").write_text(json.dumps(fixture))
    assert cli.main(["verify-probe", "--probe", str(broken)]) == cli.EXIT_DATA


def test_gen_dataset_roundtrip(tmp_path):
    rc = cli.main(["gen-dataset", "--out", str(tmp_path / "ds"),
                   "--instances", "2", "--records", "1",
                   "--clutter-scenes", "1", "--seed", "3"])
    assert rc == 0
    assert (tmp_path / "ds" / "manifest.txt").exists()
