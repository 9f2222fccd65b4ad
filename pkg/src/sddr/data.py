"""Datasets: Gaussian blobs, procedural glyph images, and CIFAR-100 binaries."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._rng import STREAM_DATA, generator
from .errors import ConfigurationError, FormatError
from .nn import as_tensor

CIFAR_RECORD = 3074
CIFAR_PIXELS = 3072
CIFAR_CLASSES = 100


@dataclass(frozen=True)
class LabelSpec:
    class_id: int
    name: str
    lemmas: tuple[str, ...] = ()
    definition: str = ""

    def __post_init__(self):
        if not self.name:
            raise ConfigurationError(f"class {self.class_id} has an empty name")

    def to_json(self) -> dict:
        return {
            "class_id": self.class_id,
            "name": self.name,
            "lemmas": list(self.lemmas),
            "definition": self.definition,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LabelSpec":
        try:
            return cls(
                class_id=int(obj["class_id"]),
                name=str(obj["name"]).replace("_", " "),
                lemmas=tuple(str(s) for s in obj.get("lemmas", [])),
                definition=str(obj.get("definition", "")),
            )
        except KeyError as exc:
            raise FormatError(f"label entry missing key {exc.args[0]!r}") from None


@dataclass
class Dataset:
    """Samples as rows of ``X`` with integer class labels ``y``."""

    X: np.ndarray
    y: np.ndarray
    labels: list[LabelSpec]
    split: str = "train"
    image_shape: tuple[int, ...] | None = None
    task: object | None = field(default=None, repr=False)

    def __post_init__(self):
        self.X = as_tensor(self.X, f"{self.split} samples")
        if self.X.ndim != 2:
            self.X = self.X.reshape(len(self.X), -1)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.y) != len(self.X):
            raise ConfigurationError("sample and label counts differ")
        ids = [s.class_id for s in self.labels]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("duplicate class_id in label list")
        missing = set(np.unique(self.y).tolist()) - set(ids)
        if missing:
            raise ConfigurationError(f"labels {sorted(missing)} have no LabelSpec")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def class_counts(self) -> dict[int, int]:
        ids, counts = np.unique(self.y, return_counts=True)
        out = {s.class_id: 0 for s in self.labels}
        out.update(zip(ids.tolist(), counts.tolist()))
        return out

    def indices_of(self, class_ids) -> np.ndarray:
        return np.flatnonzero(np.isin(self.y, np.asarray(list(class_ids), dtype=np.int64)))

    def label(self, class_id: int) -> LabelSpec:
        for s in self.labels:
            if s.class_id == class_id:
                return s
        raise KeyError(class_id)


# ----------------------------------------------------------------- Gaussian


@dataclass
class GaussianTask:
    """True class-conditional model: ``N(means[c], noise_scale**2 * I)``."""

    means: np.ndarray

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    image_shape = None

    def sample(self, class_id: int, rng: np.random.Generator, count: int, noise_scale: float = 1.0):
        z = rng.standard_normal((count, self.dim))
        return self.means[class_id] + noise_scale * z


def make_gaussian_task(
    num_classes: int,
    dim: int,
    separation: float,
    per_class_train: int,
    per_class_test: int,
    seed: int,
) -> tuple[Dataset, Dataset]:
    """Isotropic unit-variance blobs with means on a sphere of radius ``separation``."""
    if num_classes < 2 or dim < 2:
        raise ConfigurationError("gaussian task needs num_classes >= 2 and dim >= 2")
    if separation < 0:
        raise ConfigurationError("separation must be non-negative")
    rng = generator(STREAM_DATA, seed)
    directions = rng.standard_normal((num_classes, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    task = GaussianTask(separation * directions)
    labels = [
        LabelSpec(c, f"class-{c}", (f"class-{c}",), f"gaussian blob {c}") for c in range(num_classes)
    ]
    train = _draw(task, rng, num_classes, per_class_train)
    test = _draw(task, rng, num_classes, per_class_test)
    return (
        Dataset(*train, labels, "train", task=task),
        Dataset(*test, labels, "test", task=task),
    )


def _draw(task, rng, num_classes, per_class):
    X = np.empty((num_classes * per_class, task.dim))
    for c in range(num_classes):
        X[c * per_class : (c + 1) * per_class] = task.sample(c, rng, per_class)
    y = np.repeat(np.arange(num_classes), per_class)
    return X, y


# ------------------------------------------------------------------- glyphs


def _stripes(angle, period):
    ca, sa = math.cos(angle), math.sin(angle)
    return lambda x, y: (np.cos(2 * np.pi * (x * ca + y * sa) / period) > 0).astype(float)


def _disc(radius):
    return lambda x, y: (np.hypot(x, y) < radius).astype(float)


def _ring(radius, width=0.14):
    return lambda x, y: (np.abs(np.hypot(x, y) - radius) < width).astype(float)


def _checker(period):
    return lambda x, y: (np.sin(np.pi * x / period) * np.sin(np.pi * y / period) > 0).astype(float)


def _blob(cx, cy, s=0.3):
    return lambda x, y: np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * s * s))


def _plus(width):
    return lambda x, y: ((np.abs(x) < width) | (np.abs(y) < width)).astype(float)


def _glyph_patterns():
    families = [
        [_disc(r) for r in (0.3, 0.5, 0.7, 0.9)],
        [_stripes(k * np.pi / 8, 0.5) for k in range(8)],
        [_ring(r) for r in (0.3, 0.5, 0.7, 0.9)],
        [_checker(p) for p in (0.4, 0.6, 0.8, 1.0)],
        [_blob(cx, cy) for cx, cy in ((-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5))],
        [_stripes(k * np.pi / 8, 1.0) for k in range(8)],
        [_plus(w) for w in (0.15, 0.3)],
    ]
    # round-robin so the first C patterns span several families
    out = []
    depth = max(len(f) for f in families)
    for i in range(depth):
        for fam in families:
            if i < len(fam):
                out.append(fam[i])
    return out


GLYPH_PATTERNS = _glyph_patterns()


@dataclass
class GlyphTask:
    """Procedural patterns with random shift/rotation jitter and pixel noise."""

    num_classes: int
    side: int = 16
    shift: float = 0.15
    rotation: float = math.radians(10.0)
    noise: float = 0.1

    @property
    def dim(self) -> int:
        return self.side * self.side

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (1, self.side, self.side)

    def sample(self, class_id: int, rng: np.random.Generator, count: int, noise_scale: float = 1.0):
        pattern = GLYPH_PATTERNS[class_id]
        grid = (np.arange(self.side) + 0.5) / self.side * 2.0 - 1.0
        gx, gy = np.meshgrid(grid, grid)
        out = np.empty((count, self.dim))
        for i in range(count):
            dx, dy = rng.uniform(-self.shift, self.shift, size=2)
            a = rng.uniform(-self.rotation, self.rotation)
            ca, sa = math.cos(a), math.sin(a)
            u = ca * (gx - dx) + sa * (gy - dy)
            v = -sa * (gx - dx) + ca * (gy - dy)
            img = pattern(u, v) + noise_scale * self.noise * rng.standard_normal(gx.shape)
            out[i] = img.ravel()
        return out


def make_glyph_task(
    num_classes: int,
    image_side: int = 16,
    per_class_train: int = 100,
    per_class_test: int = 100,
    seed: int = 0,
    shift: float = 0.15,
    rotation_deg: float = 10.0,
    noise: float = 0.1,
) -> tuple[Dataset, Dataset]:
    if num_classes > len(GLYPH_PATTERNS):
        raise ConfigurationError(
            f"glyph task supports at most {len(GLYPH_PATTERNS)} classes, got {num_classes}"
        )
    if num_classes < 1:
        raise ConfigurationError("glyph task needs at least one class")
    task = GlyphTask(num_classes, image_side, shift, math.radians(rotation_deg), noise)
    rng = generator(STREAM_DATA, seed)
    labels = [LabelSpec(c, f"glyph-{c}", (f"glyph-{c}",), f"procedural glyph {c}") for c in range(num_classes)]
    sets = []
    for split, per_class in (("train", per_class_train), ("test", per_class_test)):
        X, y = _draw(task, rng, num_classes, per_class)
        sets.append(Dataset(np.clip(X, 0.0, 1.0), y, labels, split, task.image_shape, task))
    return sets[0], sets[1]


# ---------------------------------------------------------------- CIFAR-100


def load_labels(path) -> list[LabelSpec]:
    try:
        entries = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}") from None
    if not isinstance(entries, list):
        raise FormatError(f"{path}: labels file must hold a JSON array")
    return [LabelSpec.from_json(e) for e in entries]


def save_labels(path, labels: list[LabelSpec]) -> None:
    Path(path).write_text(json.dumps([s.to_json() for s in labels], indent=2))


def read_cifar100(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse records into (pixels uint8 [N, 3072], fine labels)."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD:
        raise FormatError(
            f"{path}: size {raw.size} is not a multiple of {CIFAR_RECORD}",
            offset=(raw.size // CIFAR_RECORD) * CIFAR_RECORD,
        )
    records = raw.reshape(-1, CIFAR_RECORD)
    fine = records[:, 1].astype(np.int64)
    bad = np.flatnonzero(fine >= CIFAR_CLASSES)
    if bad.size:
        raise FormatError(f"{path}: fine label {fine[bad[0]]} >= {CIFAR_CLASSES}", offset=int(bad[0]) * CIFAR_RECORD + 1)
    return records[:, 2:].copy(), fine


def write_cifar100(path, pixels: np.ndarray, fine: np.ndarray, coarse: np.ndarray | None = None) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(fine), CIFAR_PIXELS)
    coarse = np.zeros(len(fine), dtype=np.uint8) if coarse is None else np.asarray(coarse, dtype=np.uint8)
    records = np.empty((len(fine), CIFAR_RECORD), dtype=np.uint8)
    records[:, 0] = coarse
    records[:, 1] = np.asarray(fine, dtype=np.uint8)
    records[:, 2:] = pixels
    records.tofile(path)


def load_cifar100(train_path, test_path, labels_path) -> tuple[Dataset, Dataset]:
    """CIFAR-100 binaries; pixels are channel-major (R, G, B planes) in [0, 1]."""
    labels = load_labels(labels_path)
    out = []
    for split, path in (("train", train_path), ("test", test_path)):
        pixels, fine = read_cifar100(path)
        out.append(Dataset(pixels / 255.0, fine, labels, split, (3, 32, 32)))
    return out[0], out[1]


def augment(X: np.ndarray, image_shape, rng: np.random.Generator, pad: int = 2) -> np.ndarray:
    """Random horizontal flip and padded random crop; identity for flat data."""
    if image_shape is None:
        return X
    ch, h, w = image_shape
    imgs = X.reshape(len(X), ch, h, w)
    flip = rng.random(len(X)) < 0.5
    imgs = np.where(flip[:, None, None, None], imgs[..., ::-1], imgs)
    padded = np.pad(imgs, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    offs = rng.integers(0, 2 * pad + 1, size=(len(X), 2))
    out = np.empty_like(imgs)
    for i, (oy, ox) in enumerate(offs):
        out[i] = padded[i, :, oy : oy + h, ox : ox + w]
    return out.reshape(len(X), -1)
