"""Color-coded segmentation dataset ingestion, splits, and class statistics.

File formats:
  palette  -- one class per line: ``id<TAB>name<TAB>R,G,B<TAB>group``
  manifest -- one pair per line:  ``split<TAB>image_path<TAB>mask_path``
               (paths relative to the manifest's directory unless absolute)
"""

from __future__ import annotations

import colorsys
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.ndimage as ndi
from PIL import Image

from .errors import ConfigError, DataError, UnknownColor

VALID_GROUPS = ("surface", "sign", "damage", "background", "vegetation", "other")
SPLITS = ("train", "val", "test")

# 4-connectivity structuring element for connected components
_CONN4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


@dataclass(frozen=True)
class ClassDef:
    id: int
    name: str
    color: tuple[int, int, int]
    group: str


@dataclass(frozen=True)
class ClassTaxonomy:
    """Ordered class set; ids contiguous from 0, colors distinct, one background."""

    classes: tuple[ClassDef, ...]

    def __post_init__(self):
        ids = [c.id for c in self.classes]
        if ids != list(range(len(ids))):
            raise ConfigError(f"class ids must be contiguous from 0, got {ids}")
        colors = [c.color for c in self.classes]
        if len(set(colors)) != len(colors):
            raise ConfigError("palette colors must be pairwise distinct")
        n_bg = sum(1 for c in self.classes if c.group == "background")
        if n_bg != 1:
            raise ConfigError(f"exactly one background class required, got {n_bg}")
        for c in self.classes:
            if c.group not in VALID_GROUPS:
                raise ConfigError(f"unknown group {c.group!r} for class {c.name!r}")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def background_id(self) -> int:
        return next(c.id for c in self.classes if c.group == "background")

    @property
    def palette(self) -> np.ndarray:
        """(C, 3) uint8 array of class colors."""
        return np.array([c.color for c in self.classes], dtype=np.uint8)

    def names(self) -> list[str]:
        return [c.name for c in self.classes]

    @classmethod
    def from_file(cls, path) -> "ClassTaxonomy":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"palette file not found: {path}")
        classes = []
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields")
            cid, name, rgb, group = parts
            try:
                color = tuple(int(v) for v in rgb.split(","))
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad color {rgb!r}") from None
            if len(color) != 3 or any(not 0 <= v <= 255 for v in color):
                raise DataError(f"{path}:{lineno}: bad color {rgb!r}")
            classes.append(ClassDef(int(cid), name, color, group))
        classes.sort(key=lambda c: c.id)
        return cls(tuple(classes))

    def to_file(self, path) -> None:
        lines = [f"{c.id}\t{c.name}\t{c.color[0]},{c.color[1]},{c.color[2]}\t{c.group}"
                 for c in self.classes]
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class Sample:
    """One image/label pair; images are HxWx3 uint8, labels HxW class ids."""

    image: np.ndarray
    label: np.ndarray
    id: str

    def validate(self, num_classes: int | None = None) -> "Sample":
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise DataError(f"sample {self.id}: image must be HxWx3")
        if self.label.shape != self.image.shape[:2]:
            raise DataError(
                f"sample {self.id}: image {self.image.shape[:2]} and "
                f"label {self.label.shape} dimensions differ"
            )
        if self.label.min(initial=0) < 0:
            raise DataError(f"sample {self.id}: negative class id")
        if num_classes is not None and self.label.size:
            top = int(self.label.max())
            if top >= num_classes:
                raise DataError(
                    f"sample {self.id}: label id {top} >= num_classes {num_classes}"
                )
        return self

    @property
    def dims(self) -> tuple[int, int]:
        return self.label.shape  # (H, W)


def _pack(rgb: np.ndarray) -> np.ndarray:
    r = rgb[..., 0].astype(np.int64)
    g = rgb[..., 1].astype(np.int64)
    b = rgb[..., 2].astype(np.int64)
    return (r << 16) | (g << 8) | b


def decode_color_mask(rgb_mask: np.ndarray, taxonomy: ClassTaxonomy) -> np.ndarray:
    """Map a color-coded HxWx3 mask to class ids. Exact color match only."""
    if rgb_mask.ndim != 3 or rgb_mask.shape[2] != 3:
        raise DataError("color mask must be HxWx3")
    codes = _pack(taxonomy.palette)
    order = np.argsort(codes)
    sorted_codes = codes[order]
    pix = _pack(rgb_mask)
    idx = np.searchsorted(sorted_codes, pix)
    idx = np.clip(idx, 0, len(sorted_codes) - 1)
    bad = sorted_codes[idx] != pix
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise UnknownColor(rgb_mask[y, x], (y, x))
    return order[idx].astype(np.int64)


def encode_color_mask(label: np.ndarray, taxonomy: ClassTaxonomy) -> np.ndarray:
    """Paint class ids back through the palette (inverse of decode)."""
    if label.min(initial=0) < 0 or label.max(initial=0) >= taxonomy.num_classes:
        raise DataError("label ids out of palette range")
    return taxonomy.palette[label]


def load_manifest(path) -> dict[str, list[tuple[str, str]]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest file not found: {path}")
    pairs: dict[str, list[tuple[str, str]]] = {s: [] for s in SPLITS}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{path}:{lineno}: expected 'split<TAB>image<TAB>mask'")
        split, img, mask = parts
        if split not in SPLITS:
            raise DataError(f"{path}:{lineno}: unknown split {split!r}")
        pairs[split].append((img, mask))
    return pairs


def _read_rgb(path: Path) -> np.ndarray:
    if not path.is_file():
        raise DataError(f"file not found: {path}")
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def load_dataset(root, manifest, taxonomy: ClassTaxonomy) -> dict[str, list[Sample]]:
    """Load all splits listed in a manifest into validated Samples."""
    manifest = Path(manifest)
    root = Path(root) if root is not None else manifest.parent
    pairs = load_manifest(manifest)
    splits: dict[str, list[Sample]] = {}
    seen: dict[str, str] = {}
    for split in SPLITS:
        samples = []
        for img_rel, mask_rel in pairs[split]:
            img_path = root / img_rel
            mask_path = root / mask_rel
            image = _read_rgb(img_path)
            mask_rgb = _read_rgb(mask_path)
            if mask_rgb.shape[:2] != image.shape[:2]:
                raise DataError(
                    f"{img_path.name}: image {image.shape[:2]} and mask "
                    f"{mask_rgb.shape[:2]} dimensions differ"
                )
            label = decode_color_mask(mask_rgb, taxonomy)
            sid = Path(img_rel).stem
            if sid in seen:
                raise DataError(f"sample id {sid!r} appears in both "
                                f"{seen[sid]!r} and {split!r}")
            seen[sid] = split
            samples.append(Sample(image, label, sid).validate(taxonomy.num_classes))
        splits[split] = samples
    return splits


def split_samples(samples: list[Sample], seed: int,
                  fractions=(0.7, 0.15, 0.15)) -> dict[str, list[Sample]]:
    """Deterministic shuffle-split into train/val/test."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    n_train = int(len(samples) * fractions[0])
    n_val = int(len(samples) * fractions[1])
    idx = {
        "train": order[:n_train],
        "val": order[n_train:n_train + n_val],
        "test": order[n_train + n_val:],
    }
    return {k: [samples[i] for i in v] for k, v in idx.items()}


@dataclass
class DatasetStats:
    """Per-class pixel counts, blob min-edge distributions, inverse frequencies."""

    pixel_count_per_class: np.ndarray
    blob_min_edge_distribution: list[list[int]]
    inverse_frequency: np.ndarray

    def blob_count(self, class_id: int) -> int:
        return len(self.blob_min_edge_distribution[class_id])

    def median_min_edge(self, class_id: int) -> float:
        edges = self.blob_min_edge_distribution[class_id]
        return float(np.median(edges)) if edges else float("nan")

    def write_csv(self, fp, taxonomy: ClassTaxonomy) -> None:
        writer = csv.writer(fp)
        writer.writerow(["class_id", "name", "pixel_count", "inverse_frequency",
                         "blob_count", "median_min_edge"])
        for c in taxonomy.classes:
            writer.writerow([
                c.id, c.name,
                int(self.pixel_count_per_class[c.id]),
                repr(float(self.inverse_frequency[c.id])),
                self.blob_count(c.id),
                repr(self.median_min_edge(c.id)),
            ])


def dataset_statistics(samples: list[Sample], taxonomy: ClassTaxonomy) -> DatasetStats:
    """Exact pixel tallies plus 4-connected blob bounding-box min edges."""
    if not samples:
        raise DataError("dataset_statistics needs at least one sample")
    C = taxonomy.num_classes
    counts = np.zeros(C, dtype=np.int64)
    edges: list[list[int]] = [[] for _ in range(C)]
    for s in samples:
        counts += np.bincount(s.label.ravel(), minlength=C)[:C]
        for c in range(C):
            binary = s.label == c
            if not binary.any():
                continue
            labeled, n = ndi.label(binary, structure=_CONN4)
            for sl in ndi.find_objects(labeled):
                h = sl[0].stop - sl[0].start
                w = sl[1].stop - sl[1].start
                edges[c].append(int(min(h, w)))
    top = counts.max()
    with np.errstate(divide="ignore"):
        inv = np.where(counts > 0, top / np.maximum(counts, 1), np.inf)
    return DatasetStats(counts, edges, inv.astype(np.float64))


def fixture_palette(num_classes: int) -> np.ndarray:
    """Distinct, well-separated colors; class 0 is a dark background gray."""
    colors = [(30, 30, 30)]
    for i in range(1, num_classes):
        h = (i - 1) / max(num_classes - 1, 1)
        r, g, b = colorsys.hsv_to_rgb(h, 0.85, 0.95)
        colors.append((int(r * 255), int(g * 255), int(b * 255)))
    pal = np.array(colors, dtype=np.uint8)
    if len({tuple(c) for c in pal.tolist()}) != num_classes:
        raise ConfigError(f"cannot build {num_classes} distinct fixture colors")
    return pal


def fixture_taxonomy(num_classes: int) -> ClassTaxonomy:
    pal = fixture_palette(num_classes)
    groups = ["background"] + [VALID_GROUPS[i % 3] for i in range(num_classes - 1)]
    classes = tuple(
        ClassDef(i, f"class_{i}", tuple(int(v) for v in pal[i]), groups[i])
        for i in range(num_classes)
    )
    return ClassTaxonomy(classes)


def _paint_shape(label: np.ndarray, rng: np.random.Generator, class_id: int) -> None:
    H, W = label.shape
    kind = int(rng.integers(0, 3))
    cy = int(rng.integers(0, H))
    cx = int(rng.integers(0, W))
    if kind == 0:  # rectangle
        hh = int(rng.integers(2, max(3, H // 4)))
        hw = int(rng.integers(2, max(3, W // 4)))
        label[max(0, cy - hh):cy + hh, max(0, cx - hw):cx + hw] = class_id
    elif kind == 1:  # ellipse
        ry = int(rng.integers(2, max(3, H // 5)))
        rx = int(rng.integers(2, max(3, W // 5)))
        yy, xx = np.ogrid[:H, :W]
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        label[mask] = class_id
    else:  # thin bar (keeps small-blob statistics interesting)
        length = int(rng.integers(4, max(5, W // 3)))
        thick = int(rng.integers(1, 3))
        if rng.random() < 0.5:
            label[cy:cy + thick, max(0, cx - length // 2):cx + length // 2 + 1] = class_id
        else:
            label[max(0, cy - length // 2):cy + length // 2 + 1, cx:cx + thick] = class_id


def make_synthetic_fixture(seed: int, n: int, dims: tuple[int, int],
                           num_classes: int) -> list[Sample]:
    """Deterministic color-coded dataset of random shapes on a background.

    Every class id appears in at least one sample (for n >= 1); image colors
    track the label so tiny models can learn the mapping quickly.
    """
    H, W = int(dims[0]), int(dims[1])
    if H < 32 or W < 32:
        raise ConfigError(f"fixture dims must be at least 32x32, got {dims}")
    if num_classes < 2:
        raise ConfigError("fixture needs at least 2 classes")
    pal = fixture_palette(num_classes).astype(np.float64)
    samples = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        label = np.zeros((H, W), dtype=np.int64)
        n_extra = int(rng.integers(2, 5))
        for _ in range(n_extra):
            _paint_shape(label, rng, int(rng.integers(1, num_classes)))
        required = [c for c in range(1, num_classes) if (c - 1) % n == i]
        for c in required:
            _paint_shape(label, rng, c)
        for c in required:  # shapes may overwrite each other; force presence
            if not (label == c).any():
                y = (7 * c) % (H - 6)
                x = (11 * c) % (W - 6)
                label[y:y + 6, x:x + 6] = c
        gradient = np.linspace(-18.0, 18.0, H)[:, None, None]
        image = pal[label] + gradient + rng.normal(0.0, 8.0, size=(H, W, 3))
        image = np.clip(image, 0, 255).astype(np.uint8)
        samples.append(Sample(image, label, f"synthetic-{seed}-{i:04d}"))
    return samples


def synthetic_dataset(cfg: dict) -> tuple[dict[str, list[Sample]], ClassTaxonomy]:
    """Build splits + taxonomy from a ``{"seed", "n", "dims", "num_classes"}`` dict."""
    required = {"seed", "n", "dims", "num_classes"}
    missing = required - set(cfg)
    if missing:
        raise ConfigError(f"synthetic dataset config missing keys: {sorted(missing)}")
    samples = make_synthetic_fixture(
        int(cfg["seed"]), int(cfg["n"]), tuple(cfg["dims"]), int(cfg["num_classes"])
    )
    taxonomy = fixture_taxonomy(int(cfg["num_classes"]))
    splits = split_samples(samples, seed=int(cfg["seed"]) + 1)
    return splits, taxonomy
