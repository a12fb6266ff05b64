"""Mass-patch ingestion: bounding boxes, square crops, resizing, splits.

Mammograms plus lesion contours come in, labeled square patches and a
per-patient train/val/test manifest come out. All geometry is integer
index arithmetic on row-major grids with ``x`` = column and ``y`` = row;
intensities are float in [0, 1] (each source image is min-max normalized
before cropping).
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from PIL import Image

DEFAULT_MARGIN_PX = 60
DEFAULT_MIN_SIDE = 128
CLASSIFIER_SIDE = 224

MANIFEST_COLUMNS = (
    "patient_id",
    "image_id",
    "view",
    "x_min",
    "y_min",
    "x_max",
    "y_max",
    "label",
    "source",
    "split",
)


class MalformedContourError(ValueError):
    """Contour has fewer than 3 points or a degenerate bounding box."""


class OutOfBoundsError(ValueError):
    """Bounding box does not intersect the source image."""


class EmptyInputError(ValueError):
    """An operation received an empty record list."""


class View(str, Enum):
    CC = "CC"
    MLO = "MLO"


class Label(IntEnum):
    benign = 0
    malignant = 1


class Source(str, Enum):
    CBIS_DDSM = "CBIS_DDSM"
    BCDR = "BCDR"
    FIXTURE = "FIXTURE"


class Split(str, Enum):
    train = "train"
    val = "val"
    test = "test"


class Box(NamedTuple):
    """Axis-aligned bounding box; corners are inclusive pixel coordinates."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)


@dataclass(frozen=True)
class LesionRecord:
    """One annotated lesion: provenance, geometry, and biopsy label."""

    patient_id: str
    image_id: str
    view: View
    label: Label
    source: Source
    contour: tuple[tuple[int, int], ...] | None = None
    box: Box | None = None

    def bounding_box(self) -> Box:
        if self.box is not None:
            return self.box
        if self.contour is None:
            raise MalformedContourError(
                f"record {self.image_id}: neither contour nor box present"
            )
        return compute_bounding_box(self.contour)


@dataclass
class MassPatch:
    """Square grayscale lesion crop with label and provenance.

    ``provenance`` is the originating :class:`LesionRecord` for real data or
    an opaque string tag (e.g. ``"synthetic:<seed>"``) for generated samples.
    """

    pixels: np.ndarray
    label: Label
    provenance: LesionRecord | str

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 2 or px.shape[0] != px.shape[1]:
            raise ValueError(f"patch must be square 2-D, got shape {px.shape}")
        if px.shape[0] < DEFAULT_MIN_SIDE:
            raise ValueError(f"patch side {px.shape[0]} < {DEFAULT_MIN_SIDE}")
        if float(px.min()) < -1e-6 or float(px.max()) > 1 + 1e-6:
            raise ValueError("patch intensities must lie in [0, 1]")
        self.pixels = np.clip(px, 0.0, 1.0)

    @property
    def side_px(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def patient_id(self) -> str | None:
        if isinstance(self.provenance, LesionRecord):
            return self.provenance.patient_id
        return None

    @property
    def is_synthetic(self) -> bool:
        return not isinstance(self.provenance, LesionRecord)


@dataclass
class DatasetManifest:
    """Lesion records plus a per-patient split assignment."""

    records: list[LesionRecord]
    split_assignment: dict[LesionRecord, Split] = field(default_factory=dict)
    seed: int = 0

    def records_in(self, split: Split) -> list[LesionRecord]:
        return [r for r in self.records if self.split_assignment.get(r) is split]

    def patients_in(self, split: Split) -> set[str]:
        return {r.patient_id for r in self.records_in(split)}


def compute_bounding_box(contour: Sequence[tuple[int, int]]) -> Box:
    """Tight axis-aligned hull of a pixel polygon.

    Contours with fewer than 3 points, or whose hull has zero width or
    height, are rejected: they signal corrupted upstream annotations.
    """
    if len(contour) < 3:
        raise MalformedContourError(f"contour has {len(contour)} points, need >= 3")
    xs = [int(p[0]) for p in contour]
    ys = [int(p[1]) for p in contour]
    box = Box(min(xs), min(ys), max(xs), max(ys))
    if box.width == 0 or box.height == 0:
        raise MalformedContourError(f"degenerate zero-area contour, hull {box}")
    return box


def normalize_intensity(image: np.ndarray) -> np.ndarray:
    """Min-max scale a source image to [0, 1]; constant images map to 0."""
    img = np.asarray(image, dtype=np.float32)
    lo, hi = float(img.min()), float(img.max())
    if hi == lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def extract_square_patch(
    image: np.ndarray,
    box: Box,
    label: Label = Label.benign,
    provenance: LesionRecord | str = "unknown",
    margin_px: int = DEFAULT_MARGIN_PX,
    min_side: int = DEFAULT_MIN_SIDE,
) -> MassPatch:
    """Crop a square patch of side max(w + 2m, h + 2m, min_side) around a box.

    The patch is centered on the box center (up to the half-pixel shift
    forced by parity); regions falling outside the image are zero-padded.
    """
    img = np.asarray(image, dtype=np.float32)
    h_img, w_img = img.shape
    if box.x_max < 0 or box.y_max < 0 or box.x_min > w_img - 1 or box.y_min > h_img - 1:
        raise OutOfBoundsError(f"box {box} outside {w_img}x{h_img} image")

    side = max(box.width + 2 * margin_px, box.height + 2 * margin_px, min_side)
    # floor((x_min + x_max - side) / 2) centers the box within the patch,
    # biased half a pixel left/up when parities differ
    x0 = (box.x_min + box.x_max - side) // 2
    y0 = (box.y_min + box.y_max - side) // 2

    patch = np.zeros((side, side), dtype=np.float32)
    src_y0, src_y1 = max(y0, 0), min(y0 + side, h_img)
    src_x0, src_x1 = max(x0, 0), min(x0 + side, w_img)
    if src_y0 < src_y1 and src_x0 < src_x1:
        patch[src_y0 - y0 : src_y1 - y0, src_x0 - x0 : src_x1 - x0] = img[
            src_y0:src_y1, src_x0:src_x1
        ]
    return MassPatch(pixels=patch, label=label, provenance=provenance)


def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic matrix of exact pixel-interval overlaps (downscale)."""
    w = np.zeros((n_out, n_in), dtype=np.float64)
    r = n_in / n_out
    for k in range(n_out):
        lo, hi = k * r, (k + 1) * r
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, n_in)):
            w[k, j] = max(0.0, min(hi, j + 1) - max(lo, j))
    return w / r


def _bilinear_weights(n_in: int, n_out: int) -> np.ndarray:
    """Separable bilinear interpolation weights (pixel-center convention)."""
    w = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for k in range(n_out):
        src = (k + 0.5) * scale - 0.5
        j0 = int(np.floor(src))
        t = src - j0
        ja, jb = min(max(j0, 0), n_in - 1), min(max(j0 + 1, 0), n_in - 1)
        w[k, ja] += 1.0 - t
        w[k, jb] += t
    return w


def _axis_weights(n_in: int, n_out: int) -> np.ndarray:
    """Per-axis resampling: exact area averaging down, bilinear up."""
    if n_in == n_out:
        return np.eye(n_in)
    return _area_weights(n_in, n_out) if n_in > n_out else _bilinear_weights(n_in, n_out)


def resize_grid(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize a 2-D grid; each axis uses area (down) or bilinear (up)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"expected 2-D grid, got {img.shape}")
    out = _axis_weights(img.shape[0], out_h) @ img @ _axis_weights(img.shape[1], out_w).T
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def resize_square(image: np.ndarray, out_side: int) -> np.ndarray:
    """Resize a square grid: exact area averaging down, bilinear up."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise ValueError(f"expected square 2-D grid, got {img.shape}")
    if img.shape[0] == out_side:
        return img.astype(np.float32)
    return resize_grid(img, out_side, out_side)


def resize_for_classifier(patch: MassPatch | np.ndarray) -> np.ndarray:
    """Map a square patch to the 224x224x3 classifier input contract."""
    px = patch.pixels if isinstance(patch, MassPatch) else np.asarray(patch)
    if px.ndim != 2 or px.shape[0] != px.shape[1]:
        raise ValueError(f"classifier resize needs a square patch, got {px.shape}")
    plane = resize_square(px, CLASSIFIER_SIDE)
    return np.repeat(plane[:, :, None], 3, axis=2)


def split_per_patient(
    records: Sequence[LesionRecord],
    val_fraction: float,
    seed: int,
    test_patients: Iterable[str] = (),
) -> DatasetManifest:
    """Partition patients (never individual images) into train/val[/test].

    Patients listed in ``test_patients`` (a predefined held-out split) go to
    test; the rest are shuffled by a seeded permutation of the sorted patient
    ids, so the assignment is identical for identical seeds regardless of
    record order or worker count.
    """
    if not 0 < val_fraction < 1:
        raise ValueError(f"val_fraction must be in (0, 1), got {val_fraction}")
    if not records:
        raise EmptyInputError("no lesion records to split")

    test_set = set(test_patients)
    pool = sorted({r.patient_id for r in records} - test_set)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pool))
    n_val = int(round(val_fraction * len(pool)))
    val_patients = {pool[i] for i in order[:n_val]}

    assignment: dict[LesionRecord, Split] = {}
    for rec in records:
        if rec.patient_id in test_set:
            assignment[rec] = Split.test
        elif rec.patient_id in val_patients:
            assignment[rec] = Split.val
        else:
            assignment[rec] = Split.train
    return DatasetManifest(records=list(records), split_assignment=assignment, seed=seed)


def write_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for rec in manifest.records:
            box = rec.bounding_box()
            writer.writerow(
                [
                    rec.patient_id,
                    rec.image_id,
                    rec.view.value,
                    box.x_min,
                    box.y_min,
                    box.x_max,
                    box.y_max,
                    rec.label.name,
                    rec.source.value,
                    manifest.split_assignment[rec].value,
                ]
            )


def read_manifest(path: Path | str) -> DatasetManifest:
    records: list[LesionRecord] = []
    assignment: dict[LesionRecord, Split] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"manifest {path} missing columns: {sorted(missing)}")
        for row in reader:
            rec = LesionRecord(
                patient_id=row["patient_id"],
                image_id=row["image_id"],
                view=View(row["view"]),
                label=Label[row["label"]],
                source=Source(row["source"]),
                box=Box(int(row["x_min"]), int(row["y_min"]), int(row["x_max"]), int(row["y_max"])),
            )
            records.append(rec)
            assignment[rec] = Split(row["split"])
    return DatasetManifest(records=records, split_assignment=assignment)


def patch_filename(record: LesionRecord) -> str:
    box = record.bounding_box()
    return f"{record.image_id}_{box.x_min}_{box.y_min}.png"


def write_patch_png(patch: np.ndarray | MassPatch, path: Path | str) -> None:
    """Persist a patch as lossless 16-bit grayscale PNG."""
    px = patch.pixels if isinstance(patch, MassPatch) else np.asarray(patch)
    arr = np.round(np.clip(px, 0.0, 1.0) * 65535.0).astype(np.uint16)
    Image.fromarray(arr).save(path)


def read_patch_png(path: Path | str) -> np.ndarray:
    arr = np.asarray(Image.open(path), dtype=np.float32)
    return arr / 65535.0


def write_patch_archive(
    patches: Sequence[MassPatch], manifest: DatasetManifest, out_dir: Path | str
) -> Path:
    """One PNG per patch plus a sidecar manifest CSV row.

    Patches must be aligned index-for-index with ``manifest.records``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if len(patches) != len(manifest.records):
        raise ValueError("patch list and manifest records are misaligned")
    for patch, rec in zip(patches, manifest.records):
        write_patch_png(patch, out_dir / patch_filename(rec))
    manifest_path = out_dir / "manifest.csv"
    write_manifest(manifest, manifest_path)
    return manifest_path


def load_patch_archive(
    manifest_path: Path | str, split: Split | None = None
) -> list[MassPatch]:
    """Load patches referenced by an archive manifest (optionally one split)."""
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    root = manifest_path.parent
    patches = []
    for rec in manifest.records:
        if split is not None and manifest.split_assignment[rec] is not split:
            continue
        pixels = read_patch_png(root / patch_filename(rec))
        patches.append(MassPatch(pixels=pixels, label=rec.label, provenance=rec))
    return patches


def content_hash(paths: Iterable[Path | str]) -> str:
    """Stable hash of input file contents, order-independent."""
    digests = sorted(hashlib.sha256(Path(p).read_bytes()).hexdigest() for p in paths)
    return hashlib.sha256("".join(digests).encode()).hexdigest()


def parse_contour(text: str) -> tuple[tuple[int, int], ...]:
    """Parse ``"x1 y1;x2 y2;..."`` into coordinate pairs."""
    points = []
    for chunk in text.strip().split(";"):
        if not chunk:
            continue
        x, y = chunk.split()
        points.append((int(x), int(y)))
    return tuple(points)


def read_annotations(path: Path | str) -> list[LesionRecord]:
    """Read an annotations CSV: provenance columns plus contour or box.

    Expected columns: patient_id, image_id, view, label, source and either a
    ``contour`` column ("x y;x y;...") or x_min/y_min/x_max/y_max columns.
    """
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            contour = None
            box = None
            if row.get("contour"):
                contour = parse_contour(row["contour"])
            elif row.get("x_min") not in (None, ""):
                box = Box(int(row["x_min"]), int(row["y_min"]), int(row["x_max"]), int(row["y_max"]))
            else:
                raise ValueError(f"annotation row for {row.get('image_id')} has no geometry")
            records.append(
                LesionRecord(
                    patient_id=row["patient_id"],
                    image_id=row["image_id"],
                    view=View(row["view"]),
                    label=Label[row["label"]],
                    source=Source(row["source"]),
                    contour=contour,
                    box=box,
                )
            )
    return records


def ingest_directory(
    images_dir: Path | str,
    annotations_path: Path | str,
    out_dir: Path | str,
    val_fraction: float = 0.15,
    seed: int = 0,
    margin_px: int = DEFAULT_MARGIN_PX,
    min_side: int = DEFAULT_MIN_SIDE,
) -> Path:
    """End-to-end ingestion: images + annotations -> patch archive + manifest."""
    images_dir = Path(images_dir)
    records = read_annotations(annotations_path)
    if not records:
        raise EmptyInputError(f"no records in {annotations_path}")
    manifest = split_per_patient(records, val_fraction, seed)
    patches = []
    image_cache: dict[str, np.ndarray] = {}
    for rec in manifest.records:
        if rec.image_id not in image_cache:
            image_cache[rec.image_id] = normalize_intensity(
                read_patch_png(images_dir / f"{rec.image_id}.png")
            )
        patches.append(
            extract_square_patch(
                image_cache[rec.image_id],
                rec.bounding_box(),
                label=rec.label,
                provenance=rec,
                margin_px=margin_px,
                min_side=min_side,
            )
        )
    return write_patch_archive(patches, manifest, out_dir)
