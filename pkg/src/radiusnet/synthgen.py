"""Synthetic centred pulse (1D) and disk (2D) datasets.

Grid index ``i`` sits at position ``x_i = i / (D - 1)``, so the first and last
pixels are at 0 and 1.  Membership tests are done in integer-scaled
coordinates (``|2i - (D-1)| <= 2r(D-1)``) so that masks are exactly mirror
symmetric about the centre.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

MAX_REJECTIONS = 10**6


class ConfigError(ValueError):
    """Invalid configuration value; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class SignalParams:
    r: float
    b: float
    f: float

    @property
    def polarity(self) -> int:
        return 1 if self.f > self.b else -1

    @property
    def contrast(self) -> float:
        return self.f - self.b

    def flipped(self) -> "SignalParams":
        """Same radius with foreground and background swapped."""
        return SignalParams(self.r, self.f, self.b)


@dataclass(frozen=True)
class GenConfig:
    D: int = 32
    delta: float = 50 / 255
    eps_r: float = 0.1
    sigma_g: float | None = None  # None -> 1/D
    sigma_n: float = 10 / 255
    polarity_mode: str = "both"
    dims: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.sigma_g is None:
            object.__setattr__(self, "sigma_g", 1.0 / self.D)
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.D, int) or self.D < 8:
            raise ConfigError("D", f"must be an integer >= 8, got {self.D!r}")
        if not 0 < self.delta < 1:
            raise ConfigError("delta", f"must lie in (0, 1), got {self.delta!r}")
        if not 0 < self.eps_r < 1:
            raise ConfigError("eps_r", f"must lie in (0, 1), got {self.eps_r!r}")
        if self.sigma_g < 0:
            raise ConfigError("sigma_g", f"must be >= 0, got {self.sigma_g!r}")
        if self.sigma_n < 0:
            raise ConfigError("sigma_n", f"must be >= 0, got {self.sigma_n!r}")
        if self.polarity_mode not in ("both", "positive_only"):
            raise ConfigError(
                "polarity_mode", f"must be 'both' or 'positive_only', got {self.polarity_mode!r}"
            )
        if self.dims not in (1, 2):
            raise ConfigError("dims", f"must be 1 or 2, got {self.dims!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", f"must be a non-negative integer, got {self.seed!r}")

    @property
    def r_range(self) -> tuple[float, float]:
        return self.eps_r / 2, (1 - self.eps_r) / 2

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(key, "unknown key for dataset config")
        return cls(**d)

    def replace(self, **changes) -> "GenConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class Sample:
    data: np.ndarray
    label_r: float
    params: SignalParams


def make_rng(*key: int) -> np.random.Generator:
    """Counter-based Philox generator keyed by a tuple of integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(key))))


def sample_params(cfg: GenConfig, rng: np.random.Generator) -> SignalParams:
    """Draw (r, b, f) from the conditional-uniform intensity law.

    ``b ~ U[0,1]``; in mixed mode ``f | b`` is uniform on ``[0,1]`` minus the
    closed ball of radius delta around ``b``; in positive-only mode it is
    uniform on ``[b + delta, 1]`` and ``b`` is redrawn when that is empty.
    """
    lo, hi = cfg.r_range
    delta = cfg.delta
    for _ in range(MAX_REJECTIONS):
        r = rng.uniform(lo, hi)
        b = rng.uniform(0.0, 1.0)
        if cfg.polarity_mode == "positive_only":
            if b + delta >= 1.0:
                continue
            f = rng.uniform(b + delta, 1.0)
        else:
            below = max(b - delta, 0.0)
            above = max(1.0 - (b + delta), 0.0)
            u = rng.uniform(0.0, below + above)
            f = u if u < below else b + delta + (u - below)
        if abs(f - b) <= delta:
            # boundary draw of measure zero; keep the strict-contrast invariant
            continue
        return SignalParams(float(r), float(b), float(f))
    raise RuntimeError("sample_params: rejection limit reached; check delta")


def pulse_mask(r: float, D: int) -> np.ndarray:
    i = np.arange(D)
    return np.abs(2 * i - (D - 1)) <= 2 * r * (D - 1)


def disk_mask(r: float, D: int) -> np.ndarray:
    i = np.arange(D)
    u = (2 * i - (D - 1)) ** 2
    dist2 = u[:, None] + u[None, :]
    return dist2 <= (2 * r * (D - 1)) ** 2


def gen_pulse_clean(params: SignalParams, D: int) -> Sample:
    mask = pulse_mask(params.r, D)
    data = np.where(mask, params.f, params.b).astype(np.float64)
    return Sample(data, params.r, params)


def gen_disk_clean(params: SignalParams, D: int) -> Sample:
    mask = disk_mask(params.r, D)
    data = np.where(mask, params.f, params.b).astype(np.float64)
    return Sample(data, params.r, params)


def gen_clean(params: SignalParams, D: int, dims: int) -> Sample:
    return gen_pulse_clean(params, D) if dims == 1 else gen_disk_clean(params, D)


def gaussian_kernel(sigma_g: float, D: int) -> np.ndarray:
    """Taps at integer offsets ``-K..K`` with ``K = ceil(3 sigma_g (D-1))``, summing to 1."""
    s_px = sigma_g * (D - 1)
    if s_px == 0:
        return np.ones(1)
    K = math.ceil(3 * s_px)
    k = np.arange(-K, K + 1)
    w = np.exp(-0.5 * (k / s_px) ** 2)
    return w / w.sum()


@functools.lru_cache(maxsize=32)
def blur_matrix(sigma_g: float, D: int) -> np.ndarray:
    """Row-normalised D x D blur operator; taps falling outside the domain are dropped.

    The returned array is cached and read-only.
    """
    w = gaussian_kernel(sigma_g, D)
    K = len(w) // 2
    G = np.zeros((D, D))
    for i in range(D):
        lo, hi = max(0, i - K), min(D, i + K + 1)
        G[i, lo:hi] = w[lo - i + K : hi - i + K]
    G /= G.sum(axis=1, keepdims=True)
    G.flags.writeable = False
    return G


def degrade(
    s: Sample, sigma_g: float, sigma_n: float, rng: np.random.Generator | None = None
) -> Sample:
    if sigma_g < 0 or sigma_n < 0:
        raise ValueError("sigma_g and sigma_n must be non-negative")
    data = s.data
    if sigma_g > 0:
        G = blur_matrix(sigma_g, data.shape[0])
        data = G @ data if data.ndim == 1 else G @ data @ G.T
    else:
        data = data.copy()
    if sigma_n > 0:
        if rng is None:
            raise ValueError("an rng is required when sigma_n > 0")
        data = data + rng.normal(0.0, sigma_n, size=data.shape)
    return Sample(data, s.label_r, s.params)


def generate_sample(cfg: GenConfig, index: int, stream: int = 0) -> Sample:
    """Sample ``index`` of a stream; depends only on (seed, stream, index)."""
    rng = make_rng(cfg.seed, stream, index)
    params = sample_params(cfg, rng)
    clean = gen_clean(params, cfg.D, cfg.dims)
    return degrade(clean, cfg.sigma_g, cfg.sigma_n, rng)


@dataclass
class Dataset:
    """Column store of ``n`` samples; indexing yields :class:`Sample`."""

    X: np.ndarray
    r: np.ndarray
    b: np.ndarray
    f: np.ndarray
    cfg: GenConfig | None = None
    stream: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.r)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.X[i], float(self.r[i]), SignalParams(float(self.r[i]), float(self.b[i]), float(self.f[i])))

    def __iter__(self) -> Iterator[Sample]:
        return (self[i] for i in range(len(self)))

    @property
    def polarity(self) -> np.ndarray:
        return np.where(self.f > self.b, 1, -1)

    @property
    def D(self) -> int:
        return self.X.shape[1]

    @property
    def dims(self) -> int:
        return self.X.ndim - 1

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.r[idx], self.b[idx], self.f[idx], self.cfg, self.stream)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.X, self.r, self.b, self.f):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], cfg: GenConfig | None = None) -> "Dataset":
        return cls(
            np.stack([s.data for s in samples]),
            np.array([s.params.r for s in samples]),
            np.array([s.params.b for s in samples]),
            np.array([s.params.f for s in samples]),
            cfg,
        )


def gen_dataset(cfg: GenConfig, n: int, stream: int = 0) -> Dataset:
    """``n`` i.i.d. samples; sample ``i`` is drawn from its own (seed, stream, i) generator."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ds = Dataset.from_samples([generate_sample(cfg, i, stream) for i in range(n)], cfg)
    ds.stream = stream
    return ds


def clean_dataset(params: Sequence[SignalParams], D: int, dims: int = 1) -> Dataset:
    return Dataset.from_samples([gen_clean(p, D, dims) for p in params])


def expected_positive_fraction(delta: float) -> float:
    """P(f > b) under the mixed-polarity law, by quadrature over b."""
    from scipy.integrate import quad

    def frac(b):
        above = max(1.0 - b - delta, 0.0)
        below = max(b - delta, 0.0)
        return above / (above + below)

    val, _ = quad(frac, 0.0, 1.0, points=[delta, 1 - delta], limit=200)
    return val


# -- export -----------------------------------------------------------------


def save_dataset(ds: Dataset, out_dir: str | Path, name: str = "data") -> dict[str, Path]:
    """Write ``<name>.csv`` (labels), ``<name>_X.csv`` (row-major intensities), ``<name>.json`` (config)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = out / f"{name}.csv"
    with labels.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["idx", "r", "b", "f", "polarity"])
        for i in range(len(ds)):
            w.writerow([i, repr(float(ds.r[i])), repr(float(ds.b[i])), repr(float(ds.f[i])), int(ds.polarity[i])])
    raw = out / f"{name}_X.csv"
    flat = ds.X.reshape(len(ds), -1)
    with raw.open("w", newline="") as fh:
        w = csv.writer(fh)
        for row in flat:
            w.writerow([repr(float(v)) for v in row])
    meta = out / f"{name}.json"
    meta.write_text(
        json.dumps(
            {
                "gen_config": ds.cfg.to_dict() if ds.cfg else None,
                "stream": ds.stream,
                "n": len(ds),
                "shape": list(ds.X.shape),
                "content_hash": ds.content_hash(),
            },
            indent=2,
        )
    )
    return {"labels": labels, "raw": raw, "meta": meta}


def load_dataset(out_dir: str | Path, name: str = "data") -> Dataset:
    out = Path(out_dir)
    meta = json.loads((out / f"{name}.json").read_text())
    rows = np.loadtxt(out / f"{name}.csv", delimiter=",", skiprows=1, ndmin=2)
    X = np.loadtxt(out / f"{name}_X.csv", delimiter=",", ndmin=2).reshape(meta["shape"])
    cfg = GenConfig.from_dict(meta["gen_config"]) if meta.get("gen_config") else None
    return Dataset(X, rows[:, 1].copy(), rows[:, 2].copy(), rows[:, 3].copy(), cfg, meta.get("stream", 0))
