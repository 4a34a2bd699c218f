"""Turn dilatation/distensibility maps into DeepONet samples.

Two input modes exist. Sensor mode (``sensor25`` or ``sensor9``) feeds five
branches: Lambda_D values on a small lattice around its maximum, the location
of that maximum, D values around its minimum, the location of the minimum and
the hypertension flag. Image mode feeds two contrast-stretched 21x20 images
and the flag.

A :class:`Dataset` keeps every input block as one float32 array with the
sample axis first, so the same arrays feed training and serialization.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import binio
from .errors import FormatError, ParameterError
from .insult import CylindricalGrid, InsultProfile
from .vessel import FieldMaps

DATASET_MAGIC = b"TAADSET1"
MODES = ("sensor25", "sensor9", "image")
SENSOR_SPACING = {"sensor25": 1, "sensor9": 2}
ENCODINGS = ("trig", "distance")

# Input blocks per mode, in branch order; the flag block is never perturbed.
SENSOR_BLOCKS = ("u1", "u2", "u3", "u4", "u5")
IMAGE_BLOCKS = ("img_ld", "img_d", "flag")
FLAG_BLOCKS = ("u5", "flag")


def input_blocks(mode: str) -> tuple[str, ...]:
    if mode not in MODES:
        raise ParameterError(f"unknown input mode {mode!r}")
    return IMAGE_BLOCKS if mode == "image" else SENSOR_BLOCKS


# ----------------------------------------------------------------------------
# images


def to_grayscale(values, lo_pct: float = 1.0, hi_pct: float = 99.0) -> np.ndarray:
    """Percentile contrast stretch to [0, 1]; a constant map gives zeros."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = np.percentile(v, [lo_pct, hi_pct])
    if not hi > lo:
        return np.zeros(v.shape, dtype=np.float32)
    return np.clip((v - lo) / (hi - lo), 0.0, 1.0).astype(np.float32)


def quantize(image) -> np.ndarray:
    """8-bit levels with rounding half up."""
    v = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, image) -> None:
    """Binary PGM (P5, maxval 255)."""
    q = quantize(image)
    h, w = q.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end : end + 1].isspace():
            end += 1
        if end == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5" or tokens[3] != b"255":
        raise FormatError(f"{path}: not an 8-bit binary PGM")
    w, h = int(tokens[1]), int(tokens[2])
    data = raw[pos + 1 :]
    if len(data) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixels, found {len(data)} bytes")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()


# ----------------------------------------------------------------------------
# sensors


def lattice_offsets(spacing: int) -> np.ndarray:
    if spacing == 1:
        return np.arange(-2, 3)
    if spacing == 2:
        return np.array([-2, 0, 2])
    raise ParameterError(f"sensor spacing must be 1 or 2, got {spacing}")


def lattice_indices(center: tuple[int, int], shape: tuple[int, int], spacing: int):
    """Row and column indices of the lattice; z clamps at the ends, theta wraps."""
    off = lattice_offsets(spacing)
    rows = np.clip(center[0] + off, 0, shape[0] - 1)
    cols = np.mod(center[1] + off, shape[1])
    return rows, cols


def lattice_values(field_: np.ndarray, center: tuple[int, int], spacing: int) -> np.ndarray:
    rows, cols = lattice_indices(center, field_.shape, spacing)
    return field_[np.ix_(rows, cols)].ravel()


def location_encoding(grid: CylindricalGrid, center: tuple[int, int], encoding: str = "trig") -> np.ndarray:
    """``(cos theta, sin theta, z/l_o)`` of a node, or its scaled surface distance from the origin node."""
    z = grid.z[center[0]]
    th = grid.theta[center[1]]
    if encoding == "trig":
        return np.array([math.cos(th), math.sin(th), z / grid.l_o])
    if encoding == "distance":
        arc = grid.r_o * min(th, 2.0 * math.pi - th)
        return np.array([math.hypot(arc, z) / grid.l_o])
    raise ParameterError(f"unknown location encoding {encoding!r}")


@dataclass
class SensorInputs:
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray
    u4: np.ndarray
    u5: np.ndarray
    center_max: tuple[int, int] = (0, 0)
    center_min: tuple[int, int] = (0, 0)


@dataclass
class ImageInputs:
    img_ld: np.ndarray
    img_d: np.ndarray
    flag: np.ndarray


def _argext(values: np.ndarray, which: str) -> tuple[int, int]:
    flat = np.argmax(values) if which == "max" else np.argmin(values)
    i, j = np.unravel_index(int(flat), values.shape)
    return int(i), int(j)


def extract_sensors(maps: FieldMaps, spacing: int, encoding: str = "trig") -> SensorInputs:
    c_max = _argext(maps.lambda_d, "max")
    c_min = _argext(maps.distensibility, "min")
    flag = np.array([1.0 if maps.scenario == "hypertensive" else 0.0])
    return SensorInputs(
        u1=lattice_values(maps.lambda_d, c_max, spacing),
        u2=location_encoding(maps.grid, c_max, encoding),
        u3=lattice_values(maps.distensibility, c_min, spacing),
        u4=location_encoding(maps.grid, c_min, encoding),
        u5=flag,
        center_max=c_max,
        center_min=c_min,
    )


def extract_images(maps: FieldMaps) -> ImageInputs:
    flag = np.array([1.0 if maps.scenario == "hypertensive" else 0.0])
    return ImageInputs(to_grayscale(maps.lambda_d), to_grayscale(maps.distensibility), flag)


def query_points(grid: CylindricalGrid) -> np.ndarray:
    """Trunk coordinates ``(cos theta, sin theta, z/l_o)`` of every node, row-major."""
    zz, tt = grid.mesh()
    return np.stack([np.cos(tt).ravel(), np.sin(tt).ravel(), (zz / grid.l_o).ravel()], axis=1)


# ----------------------------------------------------------------------------
# dataset container


@dataclass
class SampleRecord:
    case_id: str
    branch_inputs: SensorInputs | ImageInputs
    targets: np.ndarray
    query_points: np.ndarray


@dataclass
class Dataset:
    mode: str
    grid: CylindricalGrid
    inputs: dict[str, np.ndarray]
    targets: np.ndarray
    ids: list[str]
    kinds: list[str]
    scenarios: list[str]
    severities: np.ndarray
    train_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    test_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        blocks = input_blocks(self.mode)
        if set(self.inputs) != set(blocks):
            raise ParameterError(f"mode {self.mode} needs input blocks {blocks}, got {sorted(self.inputs)}")
        self.inputs = {k: np.ascontiguousarray(self.inputs[k], dtype=np.float32) for k in blocks}
        self.targets = np.ascontiguousarray(self.targets, dtype=np.float32)
        self.severities = np.asarray(self.severities, dtype=np.float64)
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)
        n = len(self.ids)
        for name, arr in [*self.inputs.items(), ("targets", self.targets)]:
            if arr.shape[0] != n:
                raise ParameterError(f"block {name} has {arr.shape[0]} rows for {n} samples")
        if len(self.kinds) != n or len(self.scenarios) != n or self.severities.shape != (n,):
            raise ParameterError("sample labels do not match the sample count")
        if self.targets.shape[1:] != (self.grid.size,):
            raise ParameterError("targets must hold one value per grid node")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def query_points(self) -> np.ndarray:
        return query_points(self.grid)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.mode,
            self.grid,
            {k: v[idx] for k, v in self.inputs.items()},
            self.targets[idx],
            [self.ids[i] for i in idx],
            [self.kinds[i] for i in idx],
            [self.scenarios[i] for i in idx],
            self.severities[idx],
            meta=dict(self.meta),
        )

    def train(self) -> "Dataset":
        return self.subset(self.train_idx)

    def test(self) -> "Dataset":
        return self.subset(self.test_idx)

    def with_inputs(self, inputs: dict[str, np.ndarray]) -> "Dataset":
        out = self.subset(np.arange(len(self)))
        out.inputs = {k: np.ascontiguousarray(inputs[k], dtype=np.float32) for k in self.inputs}
        out.train_idx, out.test_idx = self.train_idx.copy(), self.test_idx.copy()
        return out

    def record(self, i: int) -> SampleRecord:
        blk = {k: v[i] for k, v in self.inputs.items()}
        branch = ImageInputs(**blk) if self.mode == "image" else SensorInputs(**blk)
        return SampleRecord(self.ids[i], branch, self.targets[i], self.query_points)


def build_dataset(
    items: Sequence[tuple[str, InsultProfile, FieldMaps]],
    mode: str,
    *,
    encoding: str = "trig",
    meta: dict | None = None,
) -> Dataset:
    """Assemble samples from ``(id, profile, maps)`` triples (no split yet)."""
    blocks = input_blocks(mode)
    if not items:
        raise ParameterError("no samples to build a dataset from")
    grid = items[0][1].grid
    cols: dict[str, list] = {k: [] for k in blocks}
    targets, ids, kinds, scen, sev = [], [], [], [], []
    for sid, prof, maps in items:
        if prof.grid != grid or maps.grid != grid:
            raise ParameterError(f"sample {sid}: grid differs from the first sample")
        if mode == "image":
            inp = extract_images(maps)
        else:
            inp = extract_sensors(maps, SENSOR_SPACING[mode], encoding)
        for k in blocks:
            cols[k].append(getattr(inp, k))
        targets.append(prof.values.ravel())
        ids.append(str(sid))
        kinds.append(prof.kind.value)
        scen.append(maps.scenario)
        sev.append(prof.severity_max)
    inputs = {k: np.stack(v) for k, v in cols.items()}
    meta = dict(meta or {}, encoding=encoding)
    return Dataset(mode, grid, inputs, np.stack(targets), ids, kinds, scen, np.array(sev), meta=meta)


# ----------------------------------------------------------------------------
# noise and splitting


def channel_scales(inputs: dict[str, np.ndarray]) -> dict[str, float]:
    """Pooled standard deviation of each non-flag input block."""
    return {k: float(np.std(np.asarray(v, dtype=np.float64))) for k, v in inputs.items() if k not in FLAG_BLOCKS}


def add_noise(inputs: dict[str, np.ndarray], level: float, rng, scales: dict[str, float] | None = None):
    """Gaussian noise with std ``level * scale`` per input block; flags untouched, images re-clamped."""
    if level < 0:
        raise ParameterError("noise level must be non-negative")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    scales = channel_scales(inputs) if scales is None else scales
    out = {}
    for k, v in inputs.items():
        v64 = np.asarray(v, dtype=np.float64)
        if k in FLAG_BLOCKS or level == 0:
            out[k] = np.array(v, copy=True)
            continue
        noisy = v64 + rng.normal(0.0, level * scales[k], size=v64.shape)
        if k.startswith("img_"):
            noisy = np.clip(noisy, 0.0, 1.0)
        out[k] = noisy.astype(np.asarray(v).dtype)
    return out


def test_count(n: int, test_frac: float) -> int:
    return int(math.floor(test_frac * n + 0.5))


def _largest_remainder(sizes: list[int], total: int) -> list[int]:
    n = sum(sizes)
    quota = [total * s / n for s in sizes]
    alloc = [min(int(math.floor(q)), s) for q, s in zip(quota, sizes)]
    order = sorted(range(len(sizes)), key=lambda i: (-(quota[i] - math.floor(quota[i])), i))
    short = total - sum(alloc)
    for i in order:
        if short <= 0:
            break
        if alloc[i] < sizes[i]:
            alloc[i] += 1
            short -= 1
    return alloc


def split(
    kinds: Sequence[str],
    scenarios: Sequence[str],
    test_frac: float = 0.1,
    rng=0,
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded split stratified by (kind, scenario); returns sorted ``(train, test)`` indices."""
    n = len(kinds)
    if n < 10:
        raise ParameterError(f"need at least 10 samples to split, got {n}")
    if len(scenarios) != n:
        raise ParameterError("kinds and scenarios differ in length")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    n_test = test_count(n, test_frac)
    labels = [(str(k), str(s)) for k, s in zip(kinds, scenarios)]
    strata: dict[tuple[str, str], list[int]] = {}
    for i, lab in enumerate(labels):
        strata.setdefault(lab, []).append(i)
    keys = sorted(strata)
    if any(not k[0] or not k[1] for k in keys):
        warnings.warn("split: unlabeled stratum; falling back to a global shuffle", RuntimeWarning)
        perm = rng.permutation(n)
        return np.sort(perm[n_test:]), np.sort(perm[:n_test])
    alloc = _largest_remainder([len(strata[k]) for k in keys], n_test)
    test = []
    for key, m in zip(keys, alloc):
        members = np.array(strata[key])
        test.extend(members[rng.permutation(members.size)[:m]].tolist())
    test = np.sort(np.array(test, dtype=np.int64))
    train = np.setdiff1d(np.arange(n), test)
    return train, test


def assign_split(ds: Dataset, test_frac: float = 0.1, seed: int = 0) -> Dataset:
    ds.train_idx, ds.test_idx = split(ds.kinds, ds.scenarios, test_frac, np.random.default_rng(seed))
    ds.meta.update(split_seed=int(seed), test_frac=float(test_frac))
    return ds


# ----------------------------------------------------------------------------
# serialization


def write_dataset(ds: Dataset, path) -> dict:
    """Write ``manifest.json`` and ``payload.bin`` into directory ``path``; returns the manifest."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {f"input/{k}": v for k, v in ds.inputs.items()}
    arrays["targets"] = ds.targets
    blocks, chunks = binio.layout_blocks(arrays, "<f4")
    for blk in blocks:
        blk["offset"] += len(DATASET_MAGIC)
    manifest = {
        "format": "taa-onet-dataset/1",
        "mode": ds.mode,
        "n_samples": len(ds),
        "n_test": int(ds.test_idx.size),
        "grid": ds.grid.to_dict(),
        "ids": ds.ids,
        "kinds": ds.kinds,
        "scenarios": ds.scenarios,
        "severities": ds.severities.tolist(),
        "train_idx": ds.train_idx.tolist(),
        "test_idx": ds.test_idx.tolist(),
        "meta": ds.meta,
        "blocks": blocks,
        "payload_bytes": len(DATASET_MAGIC) + sum(len(c) for c in chunks),
    }
    with open(path / "payload.bin", "wb") as fh:
        fh.write(DATASET_MAGIC)
        for chunk in chunks:
            fh.write(chunk)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True, default=binio._json_default))
    return manifest


def read_dataset(path) -> Dataset:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: unreadable manifest ({exc})") from exc
    raw = (path / "payload.bin").read_bytes()
    if raw[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise FormatError(f"{path}: bad payload magic")
    if len(raw) != manifest.get("payload_bytes"):
        raise FormatError(f"{path}: payload is {len(raw)} bytes, manifest says {manifest.get('payload_bytes')}")
    arrays = binio.decode_blocks(raw, manifest["blocks"], str(path))
    try:
        grid = CylindricalGrid(**manifest["grid"])
        inputs = {k.split("/", 1)[1]: v for k, v in arrays.items() if k.startswith("input/")}
        ds = Dataset(
            manifest["mode"],
            grid,
            inputs,
            arrays["targets"],
            list(manifest["ids"]),
            list(manifest["kinds"]),
            list(manifest["scenarios"]),
            np.array(manifest["severities"], dtype=np.float64),
            np.array(manifest["train_idx"], dtype=np.int64),
            np.array(manifest["test_idx"], dtype=np.int64),
            meta=manifest.get("meta", {}),
        )
    except (KeyError, TypeError, ParameterError) as exc:
        raise FormatError(f"{path}: manifest does not match payload ({exc})") from exc
    if ds.targets.shape[1] != grid.size:
        raise FormatError(f"{path}: target width does not match grid")
    return ds


def export_pgms(ds: Dataset, directory, ids: Iterable[int] | None = None) -> list[Path]:
    """Write the image inputs of selected samples as PGM files."""
    if ds.mode != "image":
        raise ParameterError("PGM export needs an image-mode dataset")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for i in range(len(ds)) if ids is None else ids:
        for blk in ("img_ld", "img_d"):
            p = directory / f"{ds.ids[i]}_{blk}.pgm"
            write_pgm(p, ds.inputs[blk][i])
            written.append(p)
    return written
