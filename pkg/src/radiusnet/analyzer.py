"""Measurements on trained or designed networks.

Radii are in unit-domain length.  Pixel-scaled errors use ``D`` pixels per
unit length (see :data:`PX_PER_UNIT`).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, stats

from .nncore import Network, forward_batch, predict
from .synthgen import Dataset, SignalParams, clean_dataset, gen_clean

NEAR_ZERO = 1e-8
SIGN_REL_THRESHOLD = 0.1


def px_per_unit(D: int) -> float:
    """Pixels per unit-domain length used for reported errors."""
    return float(D)


def rmse_px(r_true, r_est, D: int) -> float:
    err = np.asarray(r_est, dtype=np.float64) - np.asarray(r_true, dtype=np.float64)
    return px_per_unit(D) * math.sqrt(float(np.mean(err**2)))


@dataclass
class EvalReport:
    r_true: np.ndarray
    r_est: np.ndarray
    f: np.ndarray
    b: np.ndarray
    D: int
    provenance: dict = field(default_factory=dict)

    @property
    def rmse(self) -> float:
        return math.sqrt(float(np.mean((self.r_est - self.r_true) ** 2)))

    @property
    def rmse_px(self) -> float:
        return px_per_unit(self.D) * self.rmse

    @property
    def polarity(self) -> np.ndarray:
        return np.where(self.f > self.b, 1, -1)

    def summary(self) -> dict:
        return {"n": int(len(self.r_true)), "D": self.D, "rmse": self.rmse, "rmse_px": self.rmse_px, "px_per_unit": px_per_unit(self.D)}

    def write_scatter(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r_true", "r_est", "f", "b", "polarity"])
            for row in zip(self.r_true, self.r_est, self.f, self.b, self.polarity):
                w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), repr(float(row[3])), int(row[4])])
        return path


def evaluate(net: Network, ds: Dataset, provenance: dict | None = None) -> EvalReport:
    est = predict(net, ds.X)
    return EvalReport(ds.r.copy(), est, ds.f.copy(), ds.b.copy(), net.D, provenance or {})


# -- intermediate representations -------------------------------------------------


STAGES = ("f_h", "f_hb", "f_sigma")


def dump_trace(net: Network, ds: Dataset, out_dir: str | Path, n: int | None = None) -> list[Path]:
    """One CSV per stage and sample, plus ``trace_summary.csv``.

    Stage files are long-format: ``layer,channel,i,value`` (1D) or
    ``layer,channel,row,col,value`` (2D); ``f_aodot`` files have no layer column.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(ds) if n is None else min(n, len(ds))
    cache = forward_batch(net, ds.X[:n])
    written = []
    pos_cols = ["i"] if net.dims == 1 else ["row", "col"]
    for s in range(n):
        for stage in STAGES:
            path = out / f"sample{s:04d}_{stage}.csv"
            with path.open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["layer", "channel", *pos_cols, "value"])
                for layer in range(1, net.depth + 1):
                    arr = cache[f"{stage}{layer}"][s]
                    for idx in np.ndindex(arr.shape):
                        w.writerow([layer, *idx, repr(float(arr[idx]))])
            written.append(path)
        path = out / f"sample{s:04d}_f_aodot.csv"
        arr = cache["f_aodot"][s].reshape(net.feature_shape)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["channel", *pos_cols, "value"])
            for idx in np.ndindex(arr.shape):
                w.writerow([*idx, repr(float(arr[idx]))])
        written.append(path)
    summary = out / "trace_summary.csv"
    with summary.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample", "r", "b", "f", "f_int", "b_a", "estimate"])
        for s in range(n):
            w.writerow([s, repr(float(ds.r[s])), repr(float(ds.b[s])), repr(float(ds.f[s])), repr(float(cache["f_int"][s])), repr(net.head_b), repr(float(cache["estimate"][s]))])
    written.append(summary)
    return written


# -- filters --------------------------------------------------------------------


@dataclass
class FilterClass:
    kind: str  # edge | positive_avg | negative_avg | higher_order | near_zero
    k: int
    orientation: float | None = None  # radians, 2D only; (row, col) = (sin, cos)


def _sign_changes(profile: np.ndarray, rel: float) -> int:
    big = profile[np.abs(profile) >= rel * np.abs(profile).max()]
    s = np.sign(big)
    return int(np.count_nonzero(s[1:] != s[:-1]))


def filter_orientation(taps: np.ndarray) -> float:
    """Direction in which a 2D filter responds most strongly to a linear ramp.

    The response of taps ``w`` to the ramp ``u . p`` is ``u . m`` with ``m`` the
    first moment of the taps, so the angle is that of ``m``:
    ``atan2(m_row, m_col)``.  Filters with a vanishing first moment (even
    filters) fall back to the principal axis of the tap-gradient structure
    tensor.
    """
    taps = np.asarray(taps, dtype=np.float64)
    c = np.arange(taps.shape[0]) - taps.shape[0] // 2
    m_col, m_row = np.sum(taps * c[None, :]), np.sum(taps * c[:, None])
    if math.hypot(m_col, m_row) > 1e-6 * np.abs(taps).sum():
        return math.atan2(m_row, m_col)
    g_row, g_col = np.gradient(taps)
    J = np.array([[np.sum(g_col * g_col), np.sum(g_col * g_row)], [np.sum(g_col * g_row), np.sum(g_row * g_row)]])
    _, vecs = np.linalg.eigh(J)
    v_col, v_row = vecs[:, -1]
    return math.atan2(v_row, v_col)


def directional_profile(taps: np.ndarray, angle: float) -> np.ndarray:
    """Sum of 2D taps binned by their rounded projection on the direction ``angle``."""
    n = taps.shape[0]
    c = np.arange(n) - n // 2
    proj = np.rint(np.sin(angle) * c[:, None] + np.cos(angle) * c[None, :]).astype(int)
    lo = proj.min()
    return np.bincount((proj - lo).ravel(), weights=np.asarray(taps).ravel())


def classify_filter(taps, rel_threshold: float = SIGN_REL_THRESHOLD, zero_threshold: float = NEAR_ZERO) -> FilterClass:
    """Count sign changes among the taps whose magnitude is at least
    ``rel_threshold`` times the largest one (2D: along the filter orientation)."""
    taps = np.asarray(taps, dtype=np.float64)
    if np.abs(taps).max() < zero_threshold:
        return FilterClass("near_zero", 0, None)
    orientation = None
    if taps.ndim == 2:
        orientation = filter_orientation(taps)
        nonzero = taps[np.abs(taps) >= rel_threshold * np.abs(taps).max()]
        if np.all(nonzero > 0) or np.all(nonzero < 0):
            k = 0
        else:
            k = max(1, _sign_changes(directional_profile(taps, orientation), rel_threshold))
        profile_sign = np.sign(nonzero.sum())
    else:
        k = _sign_changes(taps, rel_threshold)
        profile_sign = np.sign(taps[np.abs(taps) >= rel_threshold * np.abs(taps).max()].sum())
    if k == 0:
        return FilterClass("positive_avg" if profile_sign > 0 else "negative_avg", 0, orientation)
    if k == 1:
        return FilterClass("edge", 1, orientation)
    return FilterClass("higher_order", k, orientation)


def canonical_orientation(net: Network) -> Network:
    """Mirror a 1D single-channel net so that its filter responds positively to rising edges.

    Mirroring taps and head together computes the same function on the mirrored
    input; since pulses are symmetric about the centre, the task is unchanged.
    """
    if net.dims != 1 or net.channels != 1 or net.depth != 1:
        raise ValueError("canonical_orientation is defined for single-layer, single-channel 1D nets")
    taps = net.conv1_w[0]
    if np.sum(taps * (np.arange(len(taps)) - len(taps) // 2)) >= 0:
        return net
    p = net.params()
    return net.with_params({**p, "conv1_w": taps[::-1][None, :].copy(), "head_w": net.head_w[::-1].copy()})


@dataclass
class HeadPattern:
    left_mean_abs: float
    right_mean_abs: float
    right_slope: float

    @property
    def left_ratio(self) -> float:
        return self.left_mean_abs / self.right_mean_abs


def head_pattern_1d(net: Network) -> HeadPattern:
    """Left/right head magnitudes and least-squares slope of the right half, after canonical mirroring."""
    net = canonical_orientation(net)
    a = net.head_w
    D = net.D
    d = (2 * np.arange(D) - (D - 1)) / (2 * (D - 1))
    left, right = d < 0, d > 0
    slope = stats.linregress(d[right], a[right]).slope
    return HeadPattern(float(np.mean(np.abs(a[left]))), float(np.mean(np.abs(a[right]))), float(slope))


# -- 2D head cut profiles -----------------------------------------------------------


def cut_profile(head_map: np.ndarray, angle: float, half_width: int = 1, step: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear samples of ``head_map`` along the line through its centre at ``angle``.

    Each sample is the mean over ``2 * half_width + 1`` parallel lines spaced
    one pixel apart.  Returns ``(t, profile)`` with ``t`` the signed distance
    from the centre in pixels, running from ``-(D-1)/2`` to ``(D-1)/2``.
    """
    if math.isnan(angle):
        raise ValueError("angle is NaN")
    head_map = np.asarray(head_map, dtype=np.float64)
    D = head_map.shape[0]
    c = (D - 1) / 2
    t = np.arange(-c, c + 1e-9, step)
    dr, dc = math.sin(angle), math.cos(angle)
    vals = []
    for o in range(-half_width, half_width + 1):
        rows = c + t * dr + o * dc
        cols = c + t * dc - o * dr
        vals.append(ndimage.map_coordinates(head_map, [rows, cols], order=1, mode="nearest"))
    return t, np.mean(vals, axis=0)


def decreasing_half_spearman(t: np.ndarray, profile: np.ndarray) -> float:
    """Spearman correlation between profile value and distance from the centre
    on the half-line along which the profile decreases.

    Both half-lines are measured outward; the one with the lower correlation
    is the decreasing half and its correlation is returned.
    """
    rhos = []
    for sel in (t >= 0, t <= 0):
        rhos.append(float(stats.spearmanr(np.abs(t[sel]), profile[sel]).statistic))
    return min(rhos)


def write_profile(path: str | Path, t: np.ndarray, profile: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_px", "value"])
        for a, b in zip(t, profile):
            w.writerow([repr(float(a)), repr(float(b))])
    return path


# -- estimation manifolds ----------------------------------------------------------


@dataclass
class Manifold:
    mode: str
    r: np.ndarray
    f: np.ndarray
    b: np.ndarray
    estimate: np.ndarray
    region: np.ndarray
    b_a: float
    channel_contrib: np.ndarray | None = None

    @property
    def unbiased(self) -> np.ndarray:
        return self.estimate - self.b_a

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        C = 0 if self.channel_contrib is None else self.channel_contrib.shape[1]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "f", "b", "region", "estimate", "unbiased"] + [f"channel{c}" for c in range(C)])
            for i in range(len(self.r)):
                extra = [] if C == 0 else [repr(float(v)) for v in self.channel_contrib[i]]
                w.writerow([repr(float(self.r[i])), repr(float(self.f[i])), repr(float(self.b[i])), self.region[i], repr(float(self.estimate[i])), repr(float(self.unbiased[i]))] + extra)
        return path


def region_of(f: np.ndarray, b: np.ndarray, delta: float) -> np.ndarray:
    return np.where(f - b >= delta, "positive", np.where(b - f >= delta, "negative", "low_contrast"))


def sweep_manifold(
    net: Network,
    mode: str,
    fixed: tuple[float, ...] | float | None = None,
    n: int = 64,
    delta: float = 50 / 255,
    r_range: tuple[float, float] = (0.05, 0.45),
) -> Manifold:
    """Estimates over a parameter sweep on clean signals.

    ``fixed_intensity`` varies ``r`` over ``n`` values with ``fixed = (f, b)``
    (default (0.6, 0.2)).  ``fixed_radius`` varies ``(f, b)`` over an ``n x n``
    grid of the unit square with ``fixed = r`` (default 10 grid steps at D=32).
    """
    if mode == "fixed_intensity":
        f0, b0 = fixed if fixed is not None else (0.6, 0.2)
        r = np.linspace(r_range[0], r_range[1], n)
        f = np.full(n, f0)
        b = np.full(n, b0)
    elif mode == "fixed_radius":
        r0 = float(fixed) if fixed is not None else 10 / 31
        grid = np.linspace(0.0, 1.0, n)
        ff, bb = np.meshgrid(grid, grid, indexing="ij")
        f, b = ff.ravel(), bb.ravel()
        r = np.full(f.size, r0)
    else:
        raise ValueError(f"unknown sweep mode {mode!r}")
    X = np.stack([gen_clean(SignalParams(ri, bi, fi), net.D, net.dims).data for ri, bi, fi in zip(r, b, f)])
    contrib = per_channel_contribution(net, X)
    est = contrib.sum(axis=1) + net.head_b
    return Manifold(mode, r, f, b, est, region_of(f, b, delta), net.head_b, contrib)


def per_channel_contribution(net: Network, X: np.ndarray, batch: int = 256) -> np.ndarray:
    """``(n, C)`` array of ``sum_i a[c, i] * f_sigma[c, i]`` per sample and channel."""
    out = []
    for s in range(0, len(X), batch):
        cache = forward_batch(net, X[s : s + batch])
        out.append(cache["f_aodot"].reshape(len(cache["f_aodot"]), net.channels, -1).sum(axis=2))
    return np.concatenate(out)


# -- polarity / intensity dependence --------------------------------------------------


@dataclass
class SlopeFit:
    r: float
    slope: float
    stderr: float

    @property
    def significant(self) -> bool:
        return abs(self.slope) > 10 * self.stderr


def intensity_slope(net: Network, r: float, polarity: int = -1, delta: float = 50 / 255, n: int = 41, base: float = 0.1) -> SlopeFit:
    """Least-squares slope of the estimate against ``b - f`` at fixed radius.

    Uses clean pulses with the low intensity fixed at ``base`` and the contrast
    swept over ``[delta, 1 - base]``.
    """
    s = np.linspace(delta, 1.0 - base, n)
    if polarity < 0:
        params = [SignalParams(r, base + si, base) for si in s]
    else:
        params = [SignalParams(r, base, base + si) for si in s]
    ds = clean_dataset(params, net.D, net.dims)
    est = predict(net, ds.X)
    res = stats.linregress(ds.b - ds.f, est)
    return SlopeFit(r, float(res.slope), float(res.stderr))


# -- higher-order filter experiment ---------------------------------------------------


def best_linear_head(net: Network, ds: Dataset) -> Network:
    """Least-squares head and final bias for fixed convolution layers."""
    F = forward_batch(net, ds.X, keep=False)["features"]
    A = np.hstack([F, np.ones((len(F), 1))])
    coef, *_ = np.linalg.lstsq(A, ds.r, rcond=None)
    # lstsq works in pixel-major layout; C = 1 here so it coincides with channel-major
    return net.with_params({**net.params(), "head_w": coef[:-1], "head_b": coef[-1:]})


@dataclass
class FilterOrderResult:
    k: int
    b_h: float
    train_rmse_px: float
    test_rmse_px: float


def filter_order_experiment(
    train: Dataset, test: Dataset, ks=(0, 1, 2), biases: np.ndarray | None = None, alpha: float = 1.0
) -> list[FilterOrderResult]:
    """For each filter order, the best least-squares head over a grid of conv biases.

    The bias with the lowest training error is kept and scored on ``test``.
    """
    from .designer import design_higher_order

    if biases is None:
        biases = np.linspace(-1.0, 0.2, 61) * alpha
    results = []
    for k in ks:
        best = None
        for b_h in biases:
            net = best_linear_head(design_higher_order(k, train.D, alpha, b_h), train)
            tr = rmse_px(train.r, predict(net, train.X), train.D)
            if best is None or tr < best[0]:
                best = (tr, b_h, net)
        tr, b_h, net = best
        results.append(FilterOrderResult(k, float(b_h), tr, rmse_px(test.r, predict(net, test.X), test.D)))
    return results
