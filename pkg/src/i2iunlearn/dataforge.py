"""Synthetic shapes corpus, IDX ingestion, retain/forget/test splits and '+' poisoning."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gradcore import ContractError
from .rng import SplitMix64

CLASS_NAMES = (
    "hstripes",
    "vstripes",
    "checkerboard",
    "disk",
    "gradient",
    "corners",
)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class LabeledCorpus:
    images: np.ndarray  # (n, h, w) float64 in [0, 1]
    labels: np.ndarray  # (n,) int64
    class_names: tuple[str, ...]
    seed: int | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise ContractError("images and labels differ in length")
        if len(self.labels) and self.labels.max() >= len(self.class_names):
            raise ContractError("label outside class_names")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


@dataclass(frozen=True)
class ForgetSpec:
    mode: str = "class-level"
    classes: tuple[int, ...] = (5,)
    fraction: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))
        if self.mode not in ("class-level", "sample-level"):
            raise ContractError(f"forget mode must be class-level or sample-level, got {self.mode!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ContractError(f"forget fraction must be in (0, 1], got {self.fraction}")
        if self.mode == "class-level" and self.fraction != 1.0:
            raise ContractError("class-level forgetting requires fraction == 1.0")


@dataclass
class DatasetSplit:
    retain: np.ndarray
    forget: np.ndarray
    test: np.ndarray
    poisoned: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def test_in_classes(self, labels: np.ndarray, classes) -> np.ndarray:
        return self.test[np.isin(labels[self.test], list(classes))]

    def test_outside_classes(self, labels: np.ndarray, classes) -> np.ndarray:
        return self.test[~np.isin(labels[self.test], list(classes))]


# -- synthetic shapes --------------------------------------------------------


def _render(cls: int, u: np.ndarray, size: int) -> np.ndarray:
    """Render one image of class ``cls`` from jitter variates ``u`` (uniform [0, 1))."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    lo = 0.05 + 0.15 * u[0]
    hi = 0.65 + 0.25 * u[1]
    if cls in (0, 1):
        period = 4
        phase = math.floor(u[2] * period)
        coord = yy if cls == 0 else xx
        on = ((coord + phase) % period) < period / 2
        return np.where(on, hi, lo)
    if cls == 2:
        cell = 2 + math.floor(u[2] * 2)
        oy, ox = math.floor(u[3] * cell), math.floor(u[4] * cell)
        on = (((yy + oy) // cell + (xx + ox) // cell) % 2) == 0
        return np.where(on, hi, lo)
    if cls == 3:
        r = 3.5 + 2.0 * u[2]
        cy = (size - 1) / 2 + (u[3] - 0.5) * 2.0
        cx = (size - 1) / 2 + (u[4] - 0.5) * 2.0
        on = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        return np.where(on, hi, lo)
    if cls == 4:
        t = (yy + xx) / (2 * (size - 1)) if u[2] < 0.5 else (yy + (size - 1 - xx)) / (2 * (size - 1))
        return lo + (hi - lo) * t
    if cls == 5:
        b = 4 + math.floor(u[2] * 3)
        img = np.full((size, size), lo)
        img[:b, :b] = hi
        img[:b, size - b :] = hi
        img[size - b :, :b] = hi
        img[size - b :, size - b :] = hi
        return img
    raise ContractError(f"unknown shape class {cls}")


def generate_shapes(seed: int, n_per_class: int, size: int = 16) -> LabeledCorpus:
    """Six jittered pattern classes, ``n_per_class`` each, class-major order."""
    if n_per_class < 1:
        raise ContractError("n_per_class must be >= 1")
    rng = SplitMix64(seed)
    images, labels = [], []
    for cls in range(len(CLASS_NAMES)):
        for _ in range(n_per_class):
            images.append(np.clip(_render(cls, rng.uniform(5), size), 0.0, 1.0))
            labels.append(cls)
    return LabeledCorpus(np.stack(images), np.array(labels), CLASS_NAMES, seed)


# -- IDX ---------------------------------------------------------------------


def _read_idx(path, magic: int, ndims: int) -> tuple[tuple[int, ...], bytes]:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header", len(raw))
    (actual,) = struct.unpack_from(">I", raw, 0)
    if actual != magic:
        raise IdxFormatError(f"{path}: bad magic, expected 0x{magic:08X}, got 0x{actual:08X}", 0)
    header = 4 + 4 * ndims
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated dimension header", len(raw))
    dims = struct.unpack_from(f">{ndims}I", raw, 4)
    need = header + math.prod(dims)
    if len(raw) < need:
        raise IdxFormatError(f"{path}: truncated payload, need {need} bytes, have {len(raw)}", len(raw))
    return dims, raw[header:need]


def load_idx(images_path, labels_path, class_names=None) -> LabeledCorpus:
    dims, payload = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    (n_labels,), lab = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if dims[0] != n_labels:
        raise IdxFormatError(f"count mismatch: {dims[0]} images vs {n_labels} labels", 4)
    images = np.frombuffer(payload, dtype=np.uint8).reshape(dims).astype(np.float64) / 255.0
    labels = np.frombuffer(lab, dtype=np.uint8).astype(np.int64)
    if class_names is None:
        k = int(labels.max()) + 1 if len(labels) else 0
        class_names = tuple(str(i) for i in range(k))
    return LabeledCorpus(images, labels, tuple(class_names))


def write_idx(images_path, labels_path, images: np.ndarray, labels) -> None:
    """Write u8 IDX files (pixels rounded from [0, 1])."""
    images = np.asarray(images)
    px = np.clip(np.rint(images * 255.0), 0, 255).astype(np.uint8)
    n, h, w = px.shape
    Path(images_path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, n, h, w) + px.tobytes())
    lab = np.asarray(labels, dtype=np.uint8)
    Path(labels_path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, len(lab)) + lab.tobytes())


# -- splits ------------------------------------------------------------------


def make_split(
    corpus: LabeledCorpus, forget: ForgetSpec, test_fraction: float, seed: int
) -> DatasetSplit:
    """Stratified held-out test set, then forget/retain partition of the rest."""
    if not 0.0 <= test_fraction < 1.0:
        raise ContractError(f"test_fraction must be in [0, 1), got {test_fraction}")
    missing = [c for c in forget.classes if c < 0 or c >= corpus.n_classes or not np.any(corpus.labels == c)]
    if missing:
        raise ContractError(f"forget classes not present in corpus: {missing}")
    rng = SplitMix64(seed)
    train_by_class: dict[int, np.ndarray] = {}
    test = []
    for c in range(corpus.n_classes):
        idx = np.flatnonzero(corpus.labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_test = int(round(test_fraction * len(idx)))
        test.extend(idx[:n_test].tolist())
        train_by_class[c] = idx[n_test:]
    forget_set = []
    for c in forget.classes:
        idx = train_by_class[c]
        if forget.mode == "class-level":
            forget_set.extend(idx.tolist())
        else:
            n_f = int(round(forget.fraction * len(idx)))
            forget_set.extend(idx[:n_f].tolist())
    forget_arr = np.array(sorted(set(forget_set)), dtype=np.int64)
    train_all = np.sort(np.concatenate([v for v in train_by_class.values()]))
    retain_arr = train_all[~np.isin(train_all, forget_arr)]
    if len(forget_arr) == 0 or len(retain_arr) == 0:
        raise ContractError(f"split leaves |D_f|={len(forget_arr)}, |D_r|={len(retain_arr)}")
    return DatasetSplit(
        retain=retain_arr,
        forget=forget_arr,
        test=np.array(sorted(test), dtype=np.int64),
    )


# -- poisoning ---------------------------------------------------------------


def plus_mask(height: int, width: int, arm: int) -> np.ndarray:
    """Boolean mask of the centred '+' with ``arm`` pixels either side of the centre."""
    if not 0 <= arm <= min(height, width) // 2 - 1:
        raise ContractError(f"plus arm {arm} out of range for {height}x{width}")
    cy, cx = height // 2, width // 2
    m = np.zeros((height, width), dtype=bool)
    m[cy - arm : cy + arm + 1, cx] = True
    m[cy, cx - arm : cx + arm + 1] = True
    return m


def poison_plus(x: np.ndarray, arm: int = 3, intensity: float = 1.0) -> np.ndarray:
    """Set the centred '+' to ``intensity``; works on (h, w) or (n, h, w)."""
    h, w = x.shape[-2:]
    m = plus_mask(h, w, arm)
    out = np.array(x, dtype=np.float64, copy=True)
    out[..., m] = float(np.clip(intensity, 0.0, 1.0))
    return out
