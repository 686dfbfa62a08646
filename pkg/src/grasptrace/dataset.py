"""Synthetic tabletop grasp datasets: samplers, generators, and record IO.

An *instance* is one physical object (fixed shape and paint); a *record* is
one placement of it on the table together with the rendered image, the
organized point cloud, and a demonstrated pinch grasp. Singulated records
hold the instance alone; clutter records surround a target with distractors
of the other object type.

On disk a dataset is a directory tree of record folders, each holding

    image.ppm    binary P6, 8 bits per channel
    cloud.bin    one ASCII header line, then float32 xyz per pixel (NaN = hole)
    grasp.txt    camera-frame effector positions
    record.txt   name / type / instance / clutter flag
    scene.txt    the objects that produced the render (provenance only)

with a manifest.txt at the root listing every record folder.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError
from .grasp import EFFECTORS, GraspRecord
from .scene import (Box, CameraModel, CameraPose, Cylinder, SceneObject,
                    TableScene, annotate, overhead_pose)
from .segmentation import OrganizedPointCloud, object_mask, ransac_plane

BOX_KIND = "box"
CYLINDER_KIND = "cylinder"

# Instance shape and paint ranges (metres / unit albedo).
BOX_DEPTH = (0.045, 0.065)
BOX_WIDTH = (0.07, 0.11)
BOX_HEIGHT = (0.08, 0.11)
CYL_RADIUS = (0.020, 0.030)
CYL_HEIGHT = (0.08, 0.14)
ALBEDO = (0.60, 0.82)
YAW_LIMIT = 0.15

# Placement zones (table frame, metres). Singulated records stay central;
# clutter scenes get a little more elbow room.
SINGLE_ZONE = ((-0.08, 0.12), (-0.12, 0.12))
CLUTTER_ZONE = ((-0.12, 0.18), (-0.16, 0.16))

# Minimum gap between object footprints. Keeps silhouettes of neighbouring
# objects from meeting within a couple of feature cells, where a pair of
# opposite-polarity edges would mimic label striping.
CLEARANCE = 0.05

DEFAULT_SEED = 20331

IMAGE_FILE = "image.ppm"
CLOUD_FILE = "cloud.bin"
GRASP_FILE = "grasp.txt"
RECORD_FILE = "record.txt"
SCENE_FILE = "scene.txt"
MANIFEST_FILE = "manifest.txt"


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

def sample_object(kind: str, rng: np.random.Generator,
                  center=(0.0, 0.0), yaw: float = 0.0) -> SceneObject:
    """Draw shape and paint for a fresh instance; pose is set separately."""
    color = tuple(rng.uniform(*ALBEDO, size=3))
    if kind == BOX_KIND:
        size = (float(rng.uniform(*BOX_DEPTH)),
                float(rng.uniform(*BOX_WIDTH)),
                float(rng.uniform(*BOX_HEIGHT)))
        return Box(center, yaw, size, color)
    if kind == CYLINDER_KIND:
        return Cylinder(center, float(rng.uniform(*CYL_RADIUS)),
                        float(rng.uniform(*CYL_HEIGHT)), color)
    raise ConfigurationError(f"unknown object kind {kind!r}")


def reposed(obj: SceneObject, center, yaw: float) -> SceneObject:
    """The same instance at a new table pose (cylinders ignore yaw)."""
    if isinstance(obj, Box):
        return Box(tuple(center), yaw, obj.size, obj.color)
    if isinstance(obj, Cylinder):
        return Cylinder(tuple(center), obj.radius, obj.height, obj.color)
    raise ConfigurationError(f"cannot repose {type(obj).__name__}")


def footprint_radius(obj: SceneObject) -> float:
    if isinstance(obj, Box):
        return math.hypot(obj.size[0], obj.size[1]) / 2.0
    if isinstance(obj, Cylinder):
        return obj.radius
    raise ConfigurationError(f"no footprint for {type(obj).__name__}")


def kind_of(obj: SceneObject) -> str:
    return BOX_KIND if isinstance(obj, Box) else CYLINDER_KIND


def _sample_center(zone, rng):
    (x0, x1), (y0, y1) = zone
    return (float(rng.uniform(x0, x1)), float(rng.uniform(y0, y1)))


def _place_clear(obj: SceneObject, placed: list[SceneObject], zone,
                 rng, tries: int = 500) -> SceneObject:
    """Repose obj inside zone, keeping CLEARANCE to everything placed."""
    for _ in range(tries):
        center = _sample_center(zone, rng)
        yaw = float(rng.uniform(-YAW_LIMIT, YAW_LIMIT))
        cand = reposed(obj, center, yaw)
        ok = True
        for other in placed:
            gap = (math.hypot(center[0] - other.center[0],
                              center[1] - other.center[1])
                   - footprint_radius(cand) - footprint_radius(other))
            if gap < CLEARANCE:
                ok = False
                break
        if ok:
            return cand
    raise DataError(f"no clear placement found after {tries} tries")


# ---------------------------------------------------------------------------
# Record synthesis
# ---------------------------------------------------------------------------

def make_record(name: str, objects: list[SceneObject], target: int, *,
                instance: str = "", clutter: bool = False,
                camera: CameraModel | None = None,
                pose: CameraPose | None = None,
                depth_dropout: float = 0.0,
                seed: int | None = None) -> GraspRecord:
    """Render a scene and package it with the target's demonstrated grasp."""
    camera = camera or CameraModel()
    pose = pose or overhead_pose()
    image, cloud = TableScene(objects, camera=camera, pose=pose).render(
        depth_dropout=depth_dropout, seed=seed)
    effectors = annotate(objects[target], pose)
    return GraspRecord(name=name, image=image, cloud=cloud,
                       effectors=effectors, object_type=kind_of(objects[target]),
                       instance=instance, clutter=clutter)


def synth_instances(n_instances: int, rng) -> list[tuple[str, SceneObject]]:
    """Alternating box/cylinder instances with stable ids."""
    out = []
    counts = {BOX_KIND: 0, CYLINDER_KIND: 0}
    for i in range(n_instances):
        kind = BOX_KIND if i % 2 == 0 else CYLINDER_KIND
        obj = sample_object(kind, rng)
        out.append((f"{kind}-{counts[kind]:02d}", obj))
        counts[kind] += 1
    return out


def synth_singulated(n_instances: int = 12, n_records: int = 10,
                     seed: int = DEFAULT_SEED,
                     camera: CameraModel | None = None,
                     pose: CameraPose | None = None,
                     with_objects: bool = False):
    """In-memory singulated dataset: each instance alone, reposed per record."""
    rng = np.random.default_rng(seed)
    records, scenes = [], []
    for instance_id, obj in synth_instances(n_instances, rng):
        for j in range(n_records):
            placed = _place_clear(obj, [], SINGLE_ZONE, rng)
            name = f"{instance_id}-r{j:02d}"
            records.append(make_record(name, [placed], 0,
                                       instance=instance_id,
                                       camera=camera, pose=pose))
            scenes.append([placed])
    return (records, scenes) if with_objects else records


def synth_clutter(n_scenes: int = 24, seed: int = DEFAULT_SEED + 1,
                  camera: CameraModel | None = None,
                  pose: CameraPose | None = None,
                  with_objects: bool = False):
    """Clutter scenes: a fresh target plus 2-4 distractors of the other kind.

    Targets alternate between kinds so both object models get equal time.
    """
    rng = np.random.default_rng(seed)
    records, scenes = [], []
    for i in range(n_scenes):
        kind = BOX_KIND if i % 2 == 0 else CYLINDER_KIND
        other = CYLINDER_KIND if kind == BOX_KIND else BOX_KIND
        target = sample_object(kind, rng)
        wanted = int(rng.integers(2, 5))
        while True:
            # A crowd of large footprints can defeat rejection sampling;
            # shed one distractor and repack rather than give up.
            try:
                objects = [_place_clear(target, [], CLUTTER_ZONE, rng)]
                for _ in range(wanted):
                    distractor = sample_object(other, rng)
                    objects.append(_place_clear(distractor, objects,
                                                CLUTTER_ZONE, rng))
                break
            except DataError:
                if wanted <= 2:
                    raise
                wanted -= 1
        name = f"clutter-{i:02d}"
        records.append(make_record(name, objects, 0, instance=name,
                                   clutter=True, camera=camera, pose=pose))
        scenes.append(objects)
    return (records, scenes) if with_objects else records


def check_fully_visible(record: GraspRecord, min_height: float = 0.01) -> bool:
    """True when the segmented object mask stays off the image border."""
    plane, _ = ransac_plane(record.cloud, seed=0)
    mask = object_mask(record.cloud, plane, min_height)
    border = np.concatenate([mask[0], mask[-1], mask[:, 0], mask[:, -1]])
    return not bool(border.any())


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

def save_image_ppm(path, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"expected (3, h, w) image, got {image.shape}")
    _, h, w = image.shape
    data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.transpose(1, 2, 0).tobytes())


def load_image_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":         # comment line
            pos = blob.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        fields.append(blob[start:pos])
    pos += 1                                  # single whitespace after maxval
    if fields[0] != b"P6":
        raise DataError(f"{path}: not a binary PPM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval}")
    data = np.frombuffer(blob, dtype=np.uint8, count=h * w * 3, offset=pos)
    return data.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float64) / 255.0


def save_cloud(path, cloud: OrganizedPointCloud) -> None:
    h, w, _ = cloud.points.shape
    with open(path, "wb") as f:
        f.write(f"grasptrace-cloud v1 {h} {w}\n".encode("ascii"))
        f.write(cloud.points.astype("<f4").tobytes())


def load_cloud(path) -> OrganizedPointCloud:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii", "replace").split()
        if header[:2] != ["grasptrace-cloud", "v1"] or len(header) != 4:
            raise DataError(f"{path}: bad cloud header")
        h, w = int(header[2]), int(header[3])
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != h * w * 3:
        raise DataError(f"{path}: expected {h * w * 3} floats, got {data.size}")
    return OrganizedPointCloud(data.reshape(h, w, 3).astype(np.float64))


def save_grasp(path, effectors: dict[str, np.ndarray]) -> None:
    lines = ["grasptrace-grasp v1"]
    for eff in EFFECTORS:
        p = np.asarray(effectors[eff], dtype=float)
        lines.append("effector %s %.9g %.9g %.9g" % (eff, p[0], p[1], p[2]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_grasp(path) -> dict[str, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split() != ["grasptrace-grasp", "v1"]:
        raise DataError(f"{path}: bad grasp header")
    out = {}
    for line in lines[1:]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] != "effector" or len(tok) != 5:
            raise DataError(f"{path}: bad line {line!r}")
        out[tok[1]] = np.array([float(v) for v in tok[2:]])
    missing = [e for e in EFFECTORS if e not in out]
    if missing:
        raise DataError(f"{path}: missing effectors {missing}")
    return out


def _scene_lines(objects: list[SceneObject], target: int) -> list[str]:
    lines = ["grasptrace-scene v1", f"target {target}"]
    for obj in objects:
        c = "%.9g %.9g %.9g" % tuple(obj.color)
        if isinstance(obj, Box):
            lines.append("object box center %.9g %.9g yaw %.9g size %.9g %.9g "
                         "%.9g color %s" % (obj.center[0], obj.center[1],
                                            obj.yaw, *obj.size, c))
        else:
            lines.append("object cylinder center %.9g %.9g radius %.9g "
                         "height %.9g color %s" % (obj.center[0], obj.center[1],
                                                   obj.radius, obj.height, c))
    return lines


def load_scene(path) -> tuple[list[SceneObject], int]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split() != ["grasptrace-scene", "v1"]:
        raise DataError(f"{path}: bad scene header")
    target, objects = 0, []
    for line in lines[1:]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "target":
            target = int(tok[1])
        elif tok[0] == "object" and tok[1] == "box":
            objects.append(Box((float(tok[3]), float(tok[4])), float(tok[6]),
                               (float(tok[8]), float(tok[9]), float(tok[10])),
                               (float(tok[12]), float(tok[13]), float(tok[14]))))
        elif tok[0] == "object" and tok[1] == "cylinder":
            objects.append(Cylinder((float(tok[3]), float(tok[4])),
                                    float(tok[6]), float(tok[8]),
                                    (float(tok[10]), float(tok[11]),
                                     float(tok[12]))))
        else:
            raise DataError(f"{path}: bad line {line!r}")
    return objects, target


# ---------------------------------------------------------------------------
# Record folders and dataset trees
# ---------------------------------------------------------------------------

def save_record(record_dir, record: GraspRecord,
                objects: list[SceneObject] | None = None,
                target: int = 0) -> None:
    record_dir = Path(record_dir)
    record_dir.mkdir(parents=True, exist_ok=True)
    save_image_ppm(record_dir / IMAGE_FILE, record.image)
    save_cloud(record_dir / CLOUD_FILE, record.cloud)
    save_grasp(record_dir / GRASP_FILE, record.effectors)
    meta = ["grasptrace-record v1",
            f"name {record.name}",
            f"type {record.object_type}",
            f"instance {record.instance}",
            f"clutter {int(record.clutter)}"]
    (record_dir / RECORD_FILE).write_text("\n".join(meta) + "\n")
    if objects is not None:
        (record_dir / SCENE_FILE).write_text(
            "\n".join(_scene_lines(objects, target)) + "\n")


def load_record(record_dir) -> GraspRecord:
    record_dir = Path(record_dir)
    meta = {}
    lines = (record_dir / RECORD_FILE).read_text().splitlines()
    if not lines or lines[0].split() != ["grasptrace-record", "v1"]:
        raise DataError(f"{record_dir}: bad record header")
    for line in lines[1:]:
        tok = line.split(None, 1)
        if tok:
            meta[tok[0]] = tok[1].strip() if len(tok) > 1 else ""
    return GraspRecord(name=meta.get("name", record_dir.name),
                       image=load_image_ppm(record_dir / IMAGE_FILE),
                       cloud=load_cloud(record_dir / CLOUD_FILE),
                       effectors=load_grasp(record_dir / GRASP_FILE),
                       object_type=meta.get("type", ""),
                       instance=meta.get("instance", ""),
                       clutter=meta.get("clutter", "0") == "1")


def generate_dataset(root, n_instances: int = 12, n_records: int = 10,
                     n_clutter: int = 24, seed: int = DEFAULT_SEED,
                     camera: CameraModel | None = None,
                     pose: CameraPose | None = None) -> Path:
    """Write a full dataset tree and return the manifest path."""
    root = Path(root)
    dirs = []
    singles, single_scenes = synth_singulated(
        n_instances, n_records, seed, camera, pose, with_objects=True)
    for record, objects in zip(singles, single_scenes):
        rel = Path("singulated") / record.instance / record.name.split("-")[-1]
        save_record(root / rel, record, objects)
        dirs.append(rel)
    clutters, clutter_scenes = synth_clutter(
        n_clutter, seed + 1, camera, pose, with_objects=True)
    for record, objects in zip(clutters, clutter_scenes):
        rel = Path("clutter") / record.name
        save_record(root / rel, record, objects)
        dirs.append(rel)
    manifest = root / MANIFEST_FILE
    lines = ["grasptrace-dataset v1"]
    lines += [f"record dir={d.as_posix()}" for d in dirs]
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def load_dataset(root) -> list[GraspRecord]:
    root = Path(root)
    manifest = root / MANIFEST_FILE
    if not manifest.exists():
        raise DataError(f"no {MANIFEST_FILE} under {root}")
    lines = manifest.read_text().splitlines()
    if not lines or lines[0].split() != ["grasptrace-dataset", "v1"]:
        raise DataError(f"{manifest}: bad manifest header")
    records = []
    for line in lines[1:]:
        tok = line.split()
        if not tok:
            continue
        if tok[0] != "record" or not tok[1].startswith("dir="):
            raise DataError(f"{manifest}: bad line {line!r}")
        records.append(load_record(root / tok[1][4:]))
    return records


def records_by_instance(records) -> dict[str, list[GraspRecord]]:
    out: dict[str, list[GraspRecord]] = {}
    for rec in records:
        out.setdefault(rec.instance, []).append(rec)
    return out
