"""Synthetic sample store, prompt construction and generative backends.

Backends share one contract: ``generate_item(class_id, index, item_seed,
prompt, params)`` returns a single flat sample. Item seeds come from
``splitmix64(params.seed, class_id, index)``, which makes a store independent
of worker count and reproducible from its manifest alone.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ._rng import STREAM_DIRECTION, generator, splitmix64
from .errors import ConfigurationError, GenerationError, SamplingError
from .memory import LabeledBatch
from .losses import SYNTHETIC

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GenerationParams:
    guidance_scale: float = 2.0
    num_steps: int = 50
    width: int = 512
    height: int = 512
    seed: int = 0

    def __post_init__(self):
        if not self.guidance_scale > 0:
            raise ConfigurationError("guidance_scale must be > 0")
        if self.num_steps < 1:
            raise ConfigurationError("num_steps must be >= 1")
        if self.width < 1 or self.height < 1:
            raise ConfigurationError("width and height must be >= 1")


@dataclass(frozen=True)
class Prompt:
    text: str

    def __post_init__(self):
        if not self.text:
            raise ConfigurationError("prompt text must be nonempty")


def build_prompt(spec) -> Prompt:
    """``"<name>, <definition>"``, or just the name when there is no definition.

    The name is the first lemma (falling back to ``spec.name``) with
    underscores shown as spaces.
    """
    name = (spec.lemmas[0] if spec.lemmas else spec.name).replace("_", " ").strip()
    if not name:
        raise ConfigurationError(f"class {spec.class_id} has an empty name")
    definition = (spec.definition or "").strip()
    return Prompt(f"{name}, {definition}" if definition else name)


def item_seed(seed: int, class_id: int, index: int) -> int:
    return splitmix64(seed, class_id, index)


# --------------------------------------------------------------------- PPM


def write_ppm(path, pixels: np.ndarray) -> None:
    """Write an ``[H, W, 3]`` uint8 array as binary P6."""
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w, c = pixels.shape
    if c != 3:
        raise ValueError("PPM needs three channels")
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(pixels.tobytes())


def decode_ppm(data: bytes, where: str = "<bytes>") -> np.ndarray:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise GenerationError(f"{where}: truncated PPM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise GenerationError(f"{where}: not a binary P6 PPM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise GenerationError(f"{where}: only 8-bit PPM is supported")
    pos += 1  # single whitespace after maxval
    body = data[pos : pos + w * h * 3]
    if len(body) != w * h * 3:
        raise GenerationError(f"{where}: PPM body too short")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


def read_ppm(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise GenerationError(f"cannot read {path}: {exc.strerror}") from None
    return decode_ppm(data, str(path))


def sample_to_pixels(x: np.ndarray, image_shape) -> np.ndarray:
    ch, h, w = image_shape
    planes = np.clip(np.rint(np.asarray(x).reshape(ch, h, w) * 255.0), 0, 255).astype(np.uint8)
    if ch == 1:
        planes = np.repeat(planes, 3, axis=0)
    return np.ascontiguousarray(planes.transpose(1, 2, 0))


def pixels_to_sample(pixels: np.ndarray, image_shape) -> np.ndarray:
    ch, h, w = image_shape
    if pixels.shape != (h, w, 3):
        raise GenerationError(f"image is {pixels.shape[1]}x{pixels.shape[0]}, expected {w}x{h}")
    planes = pixels.transpose(2, 0, 1)[:ch]
    return planes.reshape(-1) / 255.0


# ----------------------------------------------------------------- sources


class GenerativeSource:
    tag = "base"

    def generate_item(self, class_id: int, index: int, seed: int, prompt: Prompt, params: GenerationParams):
        raise NotImplementedError

    def generate(self, class_id: int, count: int, seed: int, prompt: Prompt | None = None, params=None):
        params = params or GenerationParams(seed=seed)
        prompt = prompt or Prompt(f"class {class_id}")
        rows = [self.generate_item(class_id, i, item_seed(seed, class_id, i), prompt, params) for i in range(count)]
        return np.array(rows).reshape(count, -1)


class OracleSource(GenerativeSource):
    """Draws from the task's true class model with a controlled gap.

    The mean moves by ``shift`` along a fixed unit direction per class and
    the noise scale grows by ``sqrt(1 + shift / 4)``; ``shift = 0`` is a
    perfect generator.
    """

    tag = "oracle"

    def __init__(self, task, shift: float = 0.0, direction_seed: int = 0):
        if shift < 0:
            raise ConfigurationError("oracle shift must be >= 0")
        self.task = task
        self.shift = float(shift)
        self.direction_seed = direction_seed
        self._dirs: dict[int, np.ndarray] = {}

    def direction(self, class_id: int) -> np.ndarray:
        d = self._dirs.get(class_id)
        if d is None:
            d = generator(STREAM_DIRECTION, self.direction_seed, class_id).standard_normal(self.task.dim)
            d /= np.linalg.norm(d)
            self._dirs[class_id] = d
        return d

    def generate_item(self, class_id, index, seed, prompt, params):
        n_classes = getattr(self.task, "num_classes", None) or len(getattr(self.task, "means", []))
        if not 0 <= class_id < n_classes:
            raise GenerationError(f"unknown class {class_id}", class_id, index)
        rng = generator(seed)
        x = self.task.sample(class_id, rng, 1, noise_scale=math.sqrt(1.0 + self.shift / 4.0))[0]
        if self.shift:
            x = x + self.shift * self.direction(class_id)
        return x


class OfflineSource(GenerativeSource):
    """Reads pre-generated files listed under ``root/manifest.json``."""

    tag = "offline"

    def __init__(self, root, image_shape=None):
        self.root = Path(root)
        self.image_shape = image_shape
        manifest_path = self.root / "manifest.json"
        try:
            entries = json.loads(manifest_path.read_text())
        except OSError:
            raise GenerationError(f"offline store has no manifest at {manifest_path}") from None
        self._paths: dict[int, list[str]] = {}
        for e in entries:
            self._paths.setdefault(int(e["class_id"]), []).append(e["path"])

    def generate_item(self, class_id, index, seed, prompt, params):
        paths = self._paths.get(class_id)
        if paths is None:
            raise GenerationError(f"unknown class {class_id} in offline store {self.root}", class_id, index)
        if index >= len(paths):
            raise GenerationError(
                f"offline store has {len(paths)} samples for class {class_id}, index {index} requested",
                class_id,
                index,
            )
        path = self.root / paths[index]
        if not path.exists():
            raise GenerationError(f"missing file {path}", class_id, index)
        if path.suffix == ".npy":
            return np.load(path)
        return pixels_to_sample(read_ppm(path), self.image_shape)


class RemoteSource(GenerativeSource):
    """POSTs ``{endpoint}/v1/generate`` and expects a binary PPM reply."""

    tag = "remote"

    def __init__(self, endpoint: str, image_shape, timeout: float = 60.0, retries: int = 2):
        if image_shape is None:
            raise ConfigurationError("remote generation requires an image-shaped task")
        self.endpoint = endpoint.rstrip("/")
        self.image_shape = image_shape
        self.timeout = timeout
        self.retries = retries

    def request_body(self, prompt: Prompt, params: GenerationParams, seed: int) -> dict:
        return {
            "prompt": prompt.text,
            "guidance_scale": float(params.guidance_scale),
            "num_steps": int(params.num_steps),
            "seed": int(seed),
            "width": int(params.width),
            "height": int(params.height),
        }

    def generate_item(self, class_id, index, seed, prompt, params):
        body = json.dumps(self.request_body(prompt, params, seed)).encode()
        url = f"{self.endpoint}/v1/generate"
        last = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(url, data=body, headers={"Content-Type": "application/json"})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    if resp.status != 200:
                        last = f"HTTP {resp.status}"
                        continue
                    data = resp.read()
                return pixels_to_sample(decode_ppm(data, url), self.image_shape)
            except urllib.error.HTTPError as exc:
                last = f"HTTP {exc.code}"
            except (urllib.error.URLError, TimeoutError, OSError) as exc:
                last = str(getattr(exc, "reason", exc))
            except GenerationError as exc:
                last = str(exc)
            if attempt < self.retries:
                time.sleep(min(0.05 * 2**attempt, 1.0))
        raise GenerationError(f"remote generation failed for class {class_id} index {index}: {last}", class_id, index)


# ------------------------------------------------------------------- store


@dataclass
class SyntheticStore:
    dim: int
    per_class: dict[int, np.ndarray] = field(default_factory=dict)
    manifest: list[dict] = field(default_factory=list)
    _flat: tuple | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return sum(len(v) for v in self.per_class.values())

    def counts(self) -> dict[int, int]:
        return {c: len(v) for c, v in self.per_class.items()}

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        if self._flat is None:
            cs = sorted(self.per_class)
            X = np.concatenate([self.per_class[c] for c in cs]) if cs else np.zeros((0, self.dim))
            y = np.concatenate([np.full(len(self.per_class[c]), c, dtype=np.int64) for c in cs]) if cs else np.zeros(0, dtype=np.int64)
            self._flat = (X, y)
        return self._flat

    def dumps_manifest(self) -> str:
        return json.dumps(self.manifest, indent=1)


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("SDDR_THREADS", "1")))
    except ValueError:
        raise ConfigurationError("SDDR_THREADS must be an integer") from None


def update_synthetic(
    store: SyntheticStore,
    source: GenerativeSource,
    new_class_specs,
    n: int,
    params: GenerationParams,
    workers: int | None = None,
) -> SyntheticStore:
    """Generate ``n`` samples per new class and commit them all at once.

    Any failure aborts before the store changes.
    """
    specs = list(new_class_specs)
    for s in specs:
        if s.class_id in store.per_class:
            raise ConfigurationError(f"class {s.class_id} is already in the synthetic store")
    if n < 0:
        raise ConfigurationError("n must be >= 0")
    prompts = {s.class_id: build_prompt(s) for s in specs}
    jobs = [(s.class_id, i) for s in specs for i in range(n)]

    def run(job):
        c, i = job
        try:
            x = source.generate_item(c, i, item_seed(params.seed, c, i), prompts[c], params)
        except GenerationError as exc:
            if exc.class_id is None:
                exc.class_id, exc.index = c, i
            raise
        except Exception as exc:
            raise GenerationError(f"class {c} index {i}: {exc}", c, i) from exc
        return np.asarray(x, dtype=np.float64).reshape(-1)

    workers = workers or _default_workers()
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, jobs))
    else:
        rows = [run(j) for j in jobs]

    pos = 0
    new_entries = []
    new_data = {}
    for s in specs:
        c = s.class_id
        block = np.array(rows[pos : pos + n]).reshape(n, store.dim)
        if not np.all(np.isfinite(block)):
            raise GenerationError(f"non-finite synthetic sample for class {c}", c)
        new_data[c] = block
        for i in range(n):
            new_entries.append(
                {
                    "class_id": int(c),
                    "index": i,
                    "prompt": prompts[c].text,
                    "params": asdict(params),
                    "item_seed": item_seed(params.seed, c, i),
                    "source_tag": source.tag,
                    "path": None,
                }
            )
        pos += n
    store.per_class.update(new_data)
    store.manifest.extend(new_entries)
    store._flat = None
    return store


def sample_synthetic_batch(store: SyntheticStore, k: int, rng: np.random.Generator) -> LabeledBatch:
    """Uniform draw of ``k`` stored samples; with replacement only if ``k`` exceeds the store."""
    if k <= 0:
        raise ConfigurationError("synthetic batch size must be positive")
    X, y = store.flat()
    if len(y) == 0:
        raise SamplingError("synthetic store is empty")
    replace = k > len(y)
    if replace:
        log.info("synthetic batch of %d drawn with replacement from %d samples", k, len(y))
    idx = rng.choice(len(y), size=k, replace=replace)
    return LabeledBatch(X[idx], y[idx], np.full(k, SYNTHETIC, dtype=np.int8), idx.astype(np.int64), replace)


def replay_manifest(manifest: list[dict], source: GenerativeSource, dim: int) -> SyntheticStore:
    """Rebuild a store by regenerating every manifest entry."""
    store = SyntheticStore(dim)
    rows: dict[int, list[np.ndarray]] = {}
    for e in manifest:
        p = e["params"]
        params = GenerationParams(**p)
        x = source.generate_item(int(e["class_id"]), int(e["index"]), int(e["item_seed"]), Prompt(e["prompt"]), params)
        rows.setdefault(int(e["class_id"]), []).append(np.asarray(x, dtype=np.float64).reshape(-1))
    for c, r in rows.items():
        store.per_class[c] = np.array(r).reshape(len(r), dim)
    store.manifest = [dict(e) for e in manifest]
    return store


def write_offline_store(root, store: SyntheticStore, image_shape=None) -> Path:
    """Write samples to ``root/<class_id>/<index>.ppm`` plus ``manifest.json``.

    Vector (non-image) samples are written as ``.npy`` since PPM cannot hold
    them losslessly.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for e in store.manifest:
        c, i = int(e["class_id"]), int(e["index"])
        (root / str(c)).mkdir(exist_ok=True)
        x = store.per_class[c][i]
        if image_shape is not None:
            rel = f"{c}/{i}.ppm"
            write_ppm(root / rel, sample_to_pixels(x, image_shape))
        else:
            rel = f"{c}/{i}.npy"
            np.save(root / rel, x)
        entries.append({**e, "path": rel})
    tmp = root / "manifest.json.tmp"
    tmp.write_text(json.dumps(entries, indent=1))
    os.replace(tmp, root / "manifest.json")
    return root
