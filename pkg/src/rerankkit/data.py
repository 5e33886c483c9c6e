"""File formats, KITTI label ingestion, disparity-to-height conversion, and
the deterministic synthetic-scene generator.

Formats (all bit-exact):
  seg mask    binary PGM (P5), one byte per pixel = class id
  height map  magic ``HMAP``, uint32-LE width and height, then row-major
              float32-LE meters; quiet NaN marks pixels with no valid height
  proposals   CSV with header ``x1,y1,x2,y2,score,objectness``
  labels      CSV with header ``class,x1,y1,x2,y2,occlusion,truncation``
              (class is the integer class id; boxes are half-open)
  manifest    line-oriented: ``@class <name> <id>`` directives, then
              ``scene_id<TAB>mask<TAB>hmap<TAB>proposals<TAB>labels`` rows
              with paths relative to the manifest file
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, replace

import numpy as np

from .core import BoundingBox, GroundTruthObject, Proposal, Scene, iou
from .errors import DataFormatError, InvalidArgumentError, SynthesisError

__all__ = [
    "HEIGHT_INVALID",
    "SceneManifest",
    "ManifestEntry",
    "StereoCalibration",
    "SynthConfig",
    "PlantRecord",
    "read_pgm",
    "write_pgm",
    "read_hmap",
    "write_hmap",
    "read_proposals_csv",
    "write_proposals_csv",
    "read_labels_csv",
    "write_labels_csv",
    "parse_kitti_labels",
    "KittiParseStats",
    "load_manifest",
    "save_manifest",
    "load_scene",
    "save_scene",
    "disparity_to_height",
    "generate_synthetic",
    "save_dataset",
    "load_dataset",
    "read_answer_key",
    "write_answer_key",
    "atomic_write_bytes",
    "atomic_write_text",
]

# Quiet NaN: distinct from every physical height and ignored by the
# height-exceeds-tau indicator (NaN > tau is False).
HEIGHT_INVALID = float("nan")


def atomic_write_bytes(path: str, payload: bytes) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# PGM class masks


def write_pgm(path: str, mask: np.ndarray) -> None:
    if mask.ndim != 2:
        raise InvalidArgumentError(f"mask must be 2D, got shape {mask.shape}")
    arr = np.ascontiguousarray(mask, dtype=np.uint8)
    h, w = arr.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    atomic_write_bytes(path, header + arr.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4 and pos < len(data):
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if pos > start:
            tokens.append(data[start:pos])
    if len(tokens) < 4 or tokens[0] != b"P5":
        raise DataFormatError("malformed PGM header", path=path, offset=0)
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise DataFormatError("non-numeric PGM header field", path=path, offset=0) from None
    if maxval != 255:
        raise DataFormatError(f"unsupported PGM maxval {maxval}", path=path)
    pos += 1  # single whitespace byte after maxval
    payload = data[pos : pos + w * h]
    if len(payload) != w * h:
        raise DataFormatError(
            f"truncated PGM payload: expected {w * h} bytes, got {len(payload)}",
            path=path,
            offset=pos,
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w).copy()


# ---------------------------------------------------------------------------
# HMAP height maps

_HMAP_MAGIC = b"HMAP"


def write_hmap(path: str, heights: np.ndarray) -> None:
    if heights.ndim != 2:
        raise InvalidArgumentError(f"height map must be 2D, got shape {heights.shape}")
    arr = np.ascontiguousarray(heights, dtype="<f4")
    h, w = arr.shape
    buf = io.BytesIO()
    buf.write(_HMAP_MAGIC)
    buf.write(np.array([w, h], dtype="<u4").tobytes())
    buf.write(arr.tobytes())
    atomic_write_bytes(path, buf.getvalue())


def read_hmap(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _HMAP_MAGIC:
        raise DataFormatError("bad HMAP magic", path=path, offset=0)
    if len(data) < 12:
        raise DataFormatError("truncated HMAP header", path=path, offset=4)
    w, h = (int(v) for v in np.frombuffer(data[4:12], dtype="<u4"))
    expected = 12 + 4 * w * h
    if len(data) != expected:
        raise DataFormatError(
            f"truncated HMAP payload: expected {expected} bytes, got {len(data)}",
            path=path,
            offset=12,
        )
    return np.frombuffer(data[12:], dtype="<f4").reshape(h, w).copy()


# ---------------------------------------------------------------------------
# Proposal and label CSVs

_PROPOSAL_HEADER = ["x1", "y1", "x2", "y2", "score", "objectness"]
_LABEL_HEADER = ["class", "x1", "y1", "x2", "y2", "occlusion", "truncation"]


def write_proposals_csv(path: str, proposals) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_PROPOSAL_HEADER)
    for p in proposals:
        writer.writerow(
            [repr(p.box.x1), repr(p.box.y1), repr(p.box.x2), repr(p.box.y2),
             repr(p.generator_score), repr(p.objectness)]
        )
    atomic_write_text(path, buf.getvalue())


def read_proposals_csv(path: str) -> list[Proposal]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _PROPOSAL_HEADER:
            raise DataFormatError(f"bad proposals header {header}", path=path)
        for lineno, row in enumerate(reader, start=2):
            try:
                x1, y1, x2, y2, s, o = (float(v) for v in row)
            except ValueError:
                raise DataFormatError(f"non-numeric proposal field on line {lineno}", path=path) from None
            out.append(Proposal(box=BoundingBox(x1, y1, x2, y2), generator_score=s, objectness=o))
    return out


def write_labels_csv(path: str, objects) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_LABEL_HEADER)
    for gt in objects:
        writer.writerow(
            [gt.class_id, repr(gt.box.x1), repr(gt.box.y1), repr(gt.box.x2), repr(gt.box.y2),
             gt.occlusion, repr(gt.truncation)]
        )
    atomic_write_text(path, buf.getvalue())


def read_labels_csv(path: str) -> list[GroundTruthObject]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _LABEL_HEADER:
            raise DataFormatError(f"bad labels header {header}", path=path)
        for lineno, row in enumerate(reader, start=2):
            try:
                cid = int(row[0])
                x1, y1, x2, y2 = (float(v) for v in row[1:5])
                occ = int(row[5])
                trunc = float(row[6])
            except (ValueError, IndexError):
                raise DataFormatError(f"malformed label on line {lineno}", path=path) from None
            out.append(GroundTruthObject(class_id=cid, box=BoundingBox(x1, y1, x2, y2),
                                         occlusion=occ, truncation=trunc))
    return out


# ---------------------------------------------------------------------------
# KITTI devkit labels (15-field lines, inclusive corners)


@dataclass
class KittiParseStats:
    dontcare: int = 0
    unmapped: int = 0


def parse_kitti_labels(text: str, class_map: dict[str, int]) -> tuple[list[GroundTruthObject], KittiParseStats]:
    """Parse KITTI devkit label lines.

    Bottom-right corners gain +1 to convert inclusive pixel labels to the
    half-open convention. ``DontCare`` lines and types absent from class_map
    are dropped, with counts.
    """
    out: list[GroundTruthObject] = []
    stats = KittiParseStats()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) < 15:
            raise DataFormatError(f"line {lineno}: expected >= 15 fields, got {len(fields)}")
        kind = fields[0]
        if kind == "DontCare":
            stats.dontcare += 1
            continue
        if kind not in class_map:
            stats.unmapped += 1
            continue
        try:
            truncation = float(fields[1])
            occlusion = int(fields[2])
            left, top, right, bottom = (float(v) for v in fields[4:8])
        except ValueError:
            raise DataFormatError(f"line {lineno}: non-numeric field") from None
        out.append(
            GroundTruthObject(
                class_id=class_map[kind],
                box=BoundingBox(left, top, right + 1.0, bottom + 1.0),
                occlusion=occlusion,
                truncation=truncation,
            )
        )
    return out, stats


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class ManifestEntry:
    scene_id: str
    mask_path: str
    hmap_path: str
    proposals_path: str
    labels_path: str


@dataclass(frozen=True)
class SceneManifest:
    root: str
    class_map: dict[str, int]  # names -> ids; must include the road class
    entries: tuple[ManifestEntry, ...]

    def __post_init__(self):
        ids = list(self.class_map.values())
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("class map must be injective")


def save_manifest(manifest: SceneManifest, path: str) -> None:
    lines = [f"@class {name} {cid}" for name, cid in manifest.class_map.items()]
    for e in manifest.entries:
        lines.append("\t".join([e.scene_id, e.mask_path, e.hmap_path, e.proposals_path, e.labels_path]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_manifest(path: str) -> SceneManifest:
    class_map: dict[str, int] = {}
    entries: list[ManifestEntry] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            if line.startswith("@class "):
                parts = line.split()
                if len(parts) != 3:
                    raise DataFormatError(f"line {lineno}: malformed @class directive", path=path)
                try:
                    class_map[parts[1]] = int(parts[2])
                except ValueError:
                    raise DataFormatError(f"line {lineno}: non-integer class id", path=path) from None
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise DataFormatError(f"line {lineno}: expected 5 tab-separated fields", path=path)
            entries.append(ManifestEntry(*parts))
    return SceneManifest(root=os.path.dirname(os.path.abspath(path)), class_map=class_map,
                         entries=tuple(entries))


def load_scene(manifest: SceneManifest, entry: ManifestEntry) -> Scene:
    mask = read_pgm(os.path.join(manifest.root, entry.mask_path))
    hmap = read_hmap(os.path.join(manifest.root, entry.hmap_path))
    if mask.shape != hmap.shape:
        raise DataFormatError(
            f"scene {entry.scene_id}: mask {mask.shape} vs height map {hmap.shape} dimension mismatch",
            path=os.path.join(manifest.root, entry.hmap_path),
        )
    proposals = read_proposals_csv(os.path.join(manifest.root, entry.proposals_path))
    labels_path = os.path.join(manifest.root, entry.labels_path)
    if entry.labels_path.endswith(".txt"):
        with open(labels_path, "r", encoding="utf-8") as fh:
            labels, _ = parse_kitti_labels(fh.read(), manifest.class_map)
    else:
        labels = read_labels_csv(labels_path)
    h, w = mask.shape
    return Scene(
        id=entry.scene_id,
        width=w,
        height=h,
        seg_mask=mask,
        height_map=hmap.astype(np.float32),
        proposals=tuple(proposals),
        ground_truth=tuple(labels),
    )


def save_scene(scene: Scene, out_dir: str) -> ManifestEntry:
    os.makedirs(out_dir, exist_ok=True)
    names = {
        "mask": f"{scene.id}_mask.pgm",
        "hmap": f"{scene.id}_height.hmap",
        "proposals": f"{scene.id}_proposals.csv",
        "labels": f"{scene.id}_labels.csv",
    }
    write_pgm(os.path.join(out_dir, names["mask"]), scene.seg_mask)
    write_hmap(os.path.join(out_dir, names["hmap"]), scene.height_map)
    write_proposals_csv(os.path.join(out_dir, names["proposals"]), scene.proposals)
    write_labels_csv(os.path.join(out_dir, names["labels"]), scene.ground_truth)
    return ManifestEntry(scene.id, names["mask"], names["hmap"], names["proposals"], names["labels"])


# ---------------------------------------------------------------------------
# Disparity to per-pixel height


@dataclass(frozen=True)
class StereoCalibration:
    focal_px: float
    baseline_m: float
    cy_px: float
    cam_height_m: float

    def __post_init__(self):
        if self.focal_px <= 0 or self.baseline_m <= 0 or self.cam_height_m <= 0:
            raise InvalidArgumentError("focal_px, baseline_m, cam_height_m must be positive")
        if self.cy_px < 0:
            raise InvalidArgumentError("cy_px must be >= 0")


def disparity_to_height(disparity: np.ndarray, calib: StereoCalibration) -> np.ndarray:
    """Per-pixel height above a flat zero-pitch road plane, in meters.

    With depth Z = focal * baseline / d and camera-frame Y = (v - cy) * Z / focal,
    height = cam_height - (v - cy) * baseline / d. Non-positive disparity maps
    to the NaN sentinel.
    """
    disparity = np.asarray(disparity, dtype=np.float64)
    if disparity.ndim != 2:
        raise InvalidArgumentError(f"disparity must be 2D, got shape {disparity.shape}")
    rows = np.arange(disparity.shape[0], dtype=np.float64)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        heights = calib.cam_height_m - (rows - calib.cy_px) * calib.baseline_m / disparity
    heights = np.where(disparity > 0.0, heights, HEIGHT_INVALID)
    return heights.astype(np.float32)


# ---------------------------------------------------------------------------
# Synthetic scenes


@dataclass(frozen=True)
class SynthConfig:
    seed: int
    n_scenes: int = 10
    width: int = 320
    height: int = 240
    class_ids: tuple[int, ...] = (2,)
    road_class_id: int = 1
    objects_per_scene: tuple[int, int] = (1, 3)
    object_width_px: tuple[int, int] = (36, 80)
    object_height_px: tuple[int, int] = (30, 60)
    plant_ious: tuple[float, ...] = (1.0, 0.9, 0.8, 0.75, 0.6, 0.5, 0.4)
    proposals_per_scene: int = 200
    road_band_frac: float = 0.3
    object_height_m: float = 1.6
    clutter_height_m: float = 4.0
    clutter_rects: int = 4
    objectness_noise: float = 0.3

    def __post_init__(self):
        if self.seed < 0:
            raise InvalidArgumentError("seed must be a non-negative integer")
        if not 0.0 < self.road_band_frac < 1.0:
            raise InvalidArgumentError("road_band_frac must lie in (0,1)")
        if self.road_class_id in self.class_ids or 0 in self.class_ids or self.road_class_id == 0:
            raise InvalidArgumentError("class ids, road id, and background (0) must be distinct")


@dataclass(frozen=True)
class PlantRecord:
    scene_id: str
    gt_index: int
    proposal_index: int
    target_iou: float
    achieved_iou: float


def _plant_box(gt: BoundingBox, target: float, rng: np.random.Generator) -> BoundingBox:
    """Shift gt along one axis so that IoU(plant, gt) equals target exactly:
    a same-size box shifted by delta along a side of length L has
    IoU = (L - delta) / (L + delta), so delta = L (1 - t) / (1 + t)."""
    if not 0.0 < target <= 1.0:
        raise SynthesisError(f"infeasible plant target IoU {target}")
    axis = int(rng.integers(0, 2))
    sign = 1.0 if rng.integers(0, 2) else -1.0
    length = gt.width if axis == 0 else gt.height
    delta = sign * length * (1.0 - target) / (1.0 + target)
    if axis == 0:
        return gt.translated(delta, 0.0)
    return gt.translated(0.0, delta)


def generate_synthetic(config: SynthConfig) -> tuple[list[Scene], list[PlantRecord]]:
    """Deterministic desk-scale dataset: a road band, class rectangles standing
    on it with sub-tau heights, tall background clutter, planted proposals at
    scheduled IoUs against each GT box, and random distractors. Generator
    order is a seeded shuffle (deliberately uninformative), with
    generator_score descending along it.
    """
    rng = np.random.default_rng(config.seed)
    scenes: list[Scene] = []
    key: list[PlantRecord] = []
    w, h = config.width, config.height
    road_top = int(h * (1.0 - config.road_band_frac))

    for s in range(config.n_scenes):
        scene_id = f"synth_{s:04d}"
        mask = np.zeros((h, w), dtype=np.uint8)
        mask[road_top:, :] = config.road_class_id
        heights = np.zeros((h, w), dtype=np.float32)

        for _ in range(config.clutter_rects):
            cw = int(rng.integers(20, max(21, w // 3)))
            ch = int(rng.integers(20, max(21, road_top // 2 + 21)))
            cx = int(rng.integers(0, max(1, w - cw)))
            cy = int(rng.integers(0, max(1, road_top - ch))) if road_top > ch else 0
            heights[cy : cy + ch, cx : cx + cw] = config.clutter_height_m

        n_obj = int(rng.integers(config.objects_per_scene[0], config.objects_per_scene[1] + 1))
        gts: list[GroundTruthObject] = []
        occupied: list[BoundingBox] = []
        for _ in range(n_obj):
            for _attempt in range(50):
                ow = int(rng.integers(*config.object_width_px))
                oh = int(rng.integers(*config.object_height_px))
                bottom = int(rng.integers(road_top + 2, road_top + max(3, (h - road_top) // 2)))
                left = int(rng.integers(ow, w - 2 * ow)) if w > 3 * ow else 0
                box = BoundingBox(float(left), float(bottom - oh), float(left + ow), float(bottom))
                if all(iou(box, other) == 0.0 for other in occupied):
                    break
            else:
                continue
            occupied.append(box)
            cid = int(config.class_ids[int(rng.integers(0, len(config.class_ids)))])
            mask[bottom - oh : bottom, left : left + ow] = cid
            # linear height ramp: 0 at the object's base, object_height_m at its top
            ramp = np.linspace(config.object_height_m, 0.0, oh, endpoint=False, dtype=np.float32)
            heights[bottom - oh : bottom, left : left + ow] = ramp[:, None]
            gts.append(GroundTruthObject(class_id=cid, box=box))

        # each plant: (gt_index, target, achieved, proposal)
        plants: list[tuple[int, float, float, Proposal]] = []
        for gi, gt in enumerate(gts):
            for target in config.plant_ious:
                pbox = _plant_box(gt.box, target, rng)
                achieved = iou(pbox, gt.box)
                if abs(achieved - target) > 0.02:
                    raise SynthesisError(
                        f"plant for {scene_id} gt {gi} missed target {target} (achieved {achieved:.4f})"
                    )
                obj_score = float(
                    np.clip(achieved * (1.0 - config.objectness_noise)
                            + config.objectness_noise * rng.random(), 0.0, 1.0)
                )
                plants.append((gi, target, achieved,
                               Proposal(box=pbox, generator_score=0.0, objectness=obj_score)))

        n_distractors = config.proposals_per_scene - len(plants)
        if n_distractors < 0:
            raise SynthesisError(
                f"{scene_id}: {len(plants)} plants exceed proposals_per_scene={config.proposals_per_scene}"
            )
        distractors: list[Proposal] = []
        for _ in range(n_distractors):
            dw = float(rng.integers(10, max(11, w // 3)))
            dh = float(rng.integers(10, max(11, h // 3)))
            dx = float(rng.uniform(0, w - dw))
            dy = float(rng.uniform(0, h - dh))
            obj_score = float(rng.uniform(0.0, 0.4))
            distractors.append(
                Proposal(box=BoundingBox(dx, dy, dx + dw, dy + dh),
                         generator_score=0.0, objectness=obj_score)
            )

        combined: list[tuple[int | None, float, float, Proposal]] = list(plants) + [
            (None, 0.0, 0.0, p) for p in distractors
        ]
        order = rng.permutation(len(combined))
        n_total = len(combined)
        proposals: list[Proposal] = []
        for rank, idx in enumerate(order):
            gi, target, achieved, p = combined[int(idx)]
            proposals.append(replace(p, generator_score=(n_total - rank) / n_total))
            if gi is not None:
                key.append(PlantRecord(scene_id, gi, rank, float(target), float(achieved)))

        scenes.append(
            Scene(
                id=scene_id,
                width=w,
                height=h,
                seg_mask=mask,
                height_map=heights,
                proposals=tuple(proposals),
                ground_truth=tuple(gts),
            )
        )
    return scenes, key


def write_answer_key(path: str, key: list[PlantRecord]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scene_id", "gt_index", "proposal_index", "target_iou", "achieved_iou"])
    for r in key:
        writer.writerow([r.scene_id, r.gt_index, r.proposal_index, repr(r.target_iou), repr(r.achieved_iou)])
    atomic_write_text(path, buf.getvalue())


def read_answer_key(path: str) -> list[PlantRecord]:
    out = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row in reader:
            out.append(PlantRecord(row[0], int(row[1]), int(row[2]), float(row[3]), float(row[4])))
    return out


def save_dataset(
    scenes: list[Scene],
    key: list[PlantRecord],
    class_map: dict[str, int],
    out_dir: str,
) -> str:
    """Write every scene plus manifest and answer key; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = [save_scene(scene, out_dir) for scene in scenes]
    manifest = SceneManifest(root=out_dir, class_map=class_map, entries=tuple(entries))
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    save_manifest(manifest, manifest_path)
    write_answer_key(os.path.join(out_dir, "answer_key.csv"), key)
    return manifest_path


def load_dataset(manifest_path: str) -> tuple[SceneManifest, list[Scene]]:
    manifest = load_manifest(manifest_path)
    return manifest, [load_scene(manifest, e) for e in manifest.entries]
