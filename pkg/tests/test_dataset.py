"""Dataset generation and the text/binary file formats."""
import numpy as np
import pytest

from grasptrace.dataset import (BOX_KIND, CLEARANCE, CYLINDER_KIND,
                                check_fully_visible, footprint_radius,
                                generate_dataset, kind_of, load_cloud,
                                load_dataset, load_grasp, load_image_ppm,
                                load_record, load_scene, records_by_instance,
                                sample_object, save_cloud, save_grasp,
                                save_image_ppm, save_record, synth_clutter,
                                synth_instances, synth_singulated)
from grasptrace.errors import DataError
from grasptrace.grasp import EFFECTORS
from grasptrace.segmentation import OrganizedPointCloud


# ---------------------------------------------------------------------------
# Sampling and scene synthesis
# ---------------------------------------------------------------------------

def test_sample_object_is_seed_deterministic():
    a = sample_object(BOX_KIND, np.random.default_rng(3))
    b = sample_object(BOX_KIND, np.random.default_rng(3))
    assert np.allclose(a.size, b.size)
    assert kind_of(a) == BOX_KIND


def test_synth_instances_alternates_kinds():
    rng = np.random.default_rng(0)
    ids = [name for name, _ in synth_instances(6, rng)]
    assert ids == ["box-00", "cylinder-00", "box-01", "cylinder-01",
                   "box-02", "cylinder-02"]


def test_synth_singulated_names_and_poses():
    records = synth_singulated(2, 3, seed=5)
    assert [r.name for r in records] == [
        "box-00-r00", "box-00-r01", "box-00-r02",
        "cylinder-00-r00", "cylinder-00-r01", "cylinder-00-r02"]
    assert all(not r.clutter for r in records)
    # Reposing must actually move the object between records.
    g0 = records[0].effectors["hand_frame"]
    g1 = records[1].effectors["hand_frame"]
    assert np.linalg.norm(g0 - g1) > 1e-3


def test_synth_clutter_scene_composition():
    records, scenes = synth_clutter(2, seed=11, with_objects=True)
    assert [r.object_type for r in records] == [BOX_KIND, CYLINDER_KIND]
    assert all(r.clutter for r in records)
    for rec, objects in zip(records, scenes):
        assert len(objects) >= 3  # target plus at least two distractors
        other = {kind_of(o) for o in objects[1:]}
        assert other == {CYLINDER_KIND if rec.object_type == BOX_KIND
                         else BOX_KIND}
        assert check_fully_visible(rec)


def test_clutter_placements_keep_clearance():
    _, scenes = synth_clutter(2, seed=11, with_objects=True)
    for objects in scenes:
        for i, a in enumerate(objects):
            for b in objects[i + 1:]:
                gap = (np.linalg.norm(np.asarray(a.center[:2])
                                      - np.asarray(b.center[:2]))
                       - footprint_radius(a) - footprint_radius(b))
                assert gap >= CLEARANCE - 1e-9


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def test_ppm_roundtrip_quantizes_to_8bit(tmp_path):
    rng = np.random.default_rng(1)
    image = rng.random((3, 17, 23))
    path = tmp_path / "img.ppm"
    save_image_ppm(path, image)
    back = load_image_ppm(path)
    assert back.shape == image.shape
    assert np.abs(back - image).max() <= 0.5 / 255 + 1e-9


def test_ppm_parser_tolerates_comments(tmp_path):
    path = tmp_path / "img.ppm"
    save_image_ppm(path, np.zeros((3, 2, 2)))
    raw = path.read_bytes()
    # Inject a comment line after the magic, as PPM allows.
    patched = raw.replace(b"P6\n", b"P6\n# made by hand\n", 1)
    path.write_bytes(patched)
    assert load_image_ppm(path).shape == (3, 2, 2)


def test_cloud_roundtrip_preserves_nan_holes(tmp_path):
    rng = np.random.default_rng(2)
    points = rng.normal(size=(9, 11, 3))
    points[2, 3] = np.nan
    points[5, :] = np.nan
    cloud = OrganizedPointCloud(points)
    path = tmp_path / "cloud.bin"
    save_cloud(path, cloud)
    back = load_cloud(path)
    assert back.points.shape == points.shape
    assert np.array_equal(np.isnan(back.points), np.isnan(points))
    valid = ~np.isnan(points)
    assert np.abs(back.points[valid]
                  - points.astype(np.float32)[valid]).max() == 0.0


def test_grasp_roundtrip(tmp_path):
    effectors = {e: np.array([0.01 * i, -0.02, 0.6 + i])
                 for i, e in enumerate(EFFECTORS)}
    path = tmp_path / "grasp.txt"
    save_grasp(path, effectors)
    back = load_grasp(path)
    for e in EFFECTORS:
        assert back[e] == pytest.approx(effectors[e], rel=1e-8)


def test_record_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    obj = sample_object(CYLINDER_KIND, rng)
    from grasptrace.dataset import make_record
    record = make_record("cylinder-00-r00", [obj], 0,
                         instance="cylinder-00")
    save_record(tmp_path / "rec", record, [obj])
    back = load_record(tmp_path / "rec")
    assert back.name == record.name
    assert back.object_type == CYLINDER_KIND
    assert back.instance == "cylinder-00"
    assert back.clutter is False
    assert back.image.shape == record.image.shape
    assert np.abs(back.image - record.image).max() <= 0.5 / 255 + 1e-9
    for e in EFFECTORS:
        assert back.effectors[e] == pytest.approx(record.effectors[e],
                                                  rel=1e-6)
    objects, target = load_scene(tmp_path / "rec" / "scene.txt")
    assert target == 0
    assert kind_of(objects[0]) == CYLINDER_KIND
    assert objects[0].radius == pytest.approx(obj.radius, rel=1e-8)
    assert objects[0].height == pytest.approx(obj.height, rel=1e-8)


# ---------------------------------------------------------------------------
# Dataset tree
# ---------------------------------------------------------------------------

def test_generate_and_load_dataset(tiny_dataset_root, tiny_records):
    singulated = [r for r in tiny_records if not r.clutter]
    clutter = [r for r in tiny_records if r.clutter]
    assert len(singulated) == 4 * 2
    assert len(clutter) == 2
    groups = records_by_instance(singulated)
    assert sorted(groups) == ["box-00", "box-01", "cylinder-00",
                              "cylinder-01"]
    assert all(len(v) == 2 for v in groups.values())
    # Loading is a pure function of the tree.
    again = load_dataset(tiny_dataset_root)
    assert [r.name for r in again] == [r.name for r in tiny_records]


def test_load_dataset_requires_manifest(tmp_path):
    with pytest.raises(DataError):
        load_dataset(tmp_path)


def test_generate_dataset_is_seed_deterministic(tmp_path):
    generate_dataset(tmp_path / "a", n_instances=2, n_records=1,
                     n_clutter=1, seed=9)
    generate_dataset(tmp_path / "b", n_instances=2, n_records=1,
                     n_clutter=1, seed=9)
    a = (tmp_path / "a" / "singulated" / "box-00" / "r00"
         / "image.ppm").read_bytes()
    b = (tmp_path / "b" / "singulated" / "box-00" / "r00"
         / "image.ppm").read_bytes()
    assert a == b
