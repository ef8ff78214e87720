"""Hand-built radius estimators for clean 1D pulses.

Each design fixes the convolution layers and biases analytically and then
fits a two-parameter head (offset, slope) by solving the forward equations
exactly on two mid-grid calibration radii.  The discrete drop mass ``M``
plays the role of the continuum factor ``2 * Delta * b_h``.

Head shapes (``d_i = x_i - 1/2``):

* ``right_affine``: ``a_i = 0`` for ``d_i < 0``, ``beta1 - beta2 * d_i`` otherwise;
* ``v_shape``: ``a_i = beta1 + beta2 * |d_i|``.

Pixels whose filter response touches the zero padding see the background
intensity through a one-sided stencil, so their head weight is set to 0.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .nncore import TAPS, Activation, Network, forward_batch
from .synthgen import SignalParams, gen_pulse_clean

REF_DELTA = 50 / 255


class DesignInfeasible(RuntimeError):
    pass


@dataclass
class DesignParams:
    alpha: float
    b_h: float
    b_a: float
    tau: float | None = None
    drop_mass: float = float("nan")
    beta1: float = float("nan")
    beta2: float = float("nan")
    residual: float = float("nan")

    def to_dict(self) -> dict:
        return asdict(self)


def derivative_filter(alpha: float) -> np.ndarray:
    """Positive unbiased central difference; a contrast-s step gives a 2-pixel peak of height alpha*s/2."""
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    return np.array([[0.0, -alpha / 2, 0.0, alpha / 2, 0.0]])


def higher_order_filter(k: int, alpha: float = 1.0) -> np.ndarray:
    """Taps with ``k`` sign changes: k=0 averaging, k=1 derivative, k=2 second difference."""
    if k == 0:
        return np.full((1, TAPS), alpha / TAPS)
    if k == 1:
        return derivative_filter(alpha)
    if k == 2:
        return np.array([[0.0, -alpha, 2 * alpha, -alpha, 0.0]]) / 2
    raise ValueError(f"unsupported filter order k={k}; 5 taps allow k in {{0, 1, 2}} here")


def half_offsets(D: int) -> np.ndarray:
    """``x_i - 1/2`` computed from integers so that it is exactly antisymmetric."""
    return (2 * np.arange(D) - (D - 1)) / (2 * (D - 1))


def mid_grid_radius(r: float, D: int) -> float:
    """Centre of the radius bin that produces the same pulse mask as ``r``."""
    step = 1 / (D - 1)
    d = np.abs(half_offsets(D))
    inside = d[d <= r]
    edge = inside.max()
    return float(edge + step / 2)


def boundary_reach(net: Network) -> int:
    """Number of border pixels whose features depend on the zero padding."""

    def reach(taps):
        nz = np.nonzero(np.abs(taps).reshape(-1, TAPS).max(axis=0))[0]
        return int(np.abs(nz - TAPS // 2).max()) if nz.size else 0

    total = reach(net.conv1_w)
    if net.conv2_w is not None:
        total += reach(net.conv2_w)
    return total


def head_basis(kind: str, D: int, reach: int) -> tuple[np.ndarray, np.ndarray]:
    d = half_offsets(D)
    keep = np.ones(D)
    if reach:
        keep[:reach] = 0
        keep[D - reach :] = 0
    if kind == "right_affine":
        support = (d >= 0) * keep
        return support, -d * support
    if kind == "v_shape":
        return keep, np.abs(d) * keep
    raise ValueError(f"unknown head kind {kind!r}")


def calibration_radii(D: int) -> tuple[float, float, float]:
    return tuple(mid_grid_radius(r, D) for r in (0.12, 0.38, 0.25))  # type: ignore[return-value]


def calibrate_head(
    net: Network,
    kind: str,
    b_a: float = 0.25,
    radii: tuple[float, float, float] | None = None,
    contrast: tuple[float, float] = (0.0, 1.0),
    tol: float = 1e-6,
) -> tuple[Network, DesignParams]:
    """Fit ``beta1, beta2`` so the estimate equals ``r`` on two radii; check a third.

    ``contrast`` is the ``(b, f)`` pair of the calibration pulses.  Raises
    :class:`DesignInfeasible` if the system is singular or the check radius
    misses by more than ``tol``.
    """
    D = net.D
    r1, r2, r3 = radii or calibration_radii(D)
    u1, u2 = head_basis(kind, D, boundary_reach(net))
    b, f = contrast
    X = np.stack([gen_pulse_clean(SignalParams(r, b, f), D).data for r in (r1, r2, r3)])
    feats = forward_batch(net, X)["f_sigma" + str(net.depth)][:, 0]
    A = np.stack([feats @ u1, feats @ u2], axis=1)
    if abs(np.linalg.det(A[:2])) < 1e-14:
        raise DesignInfeasible("calibration system is singular: the features do not locate the edge")
    beta1, beta2 = np.linalg.solve(A[:2], np.array([r1 - b_a, r2 - b_a]))
    head = beta1 * u1 + beta2 * u2
    out = net.with_params({**net.params(), "head_w": head, "head_b": np.array([b_a])})
    est3 = float(A[2] @ [beta1, beta2] + b_a)
    residual = abs(est3 - r3)
    if residual > tol:
        raise DesignInfeasible(f"check radius {r3:.6f} estimated as {est3:.6f} (residual {residual:.3g} > {tol:g})")
    # drop mass: total deviation of the features from their background level inside the head support
    region = u1 > 0
    ref = np.median(feats[0][region])
    mass = float(np.abs(feats[0][region] - ref).sum())
    params = DesignParams(np.nan, np.nan, b_a, drop_mass=mass, beta1=float(beta1), beta2=float(beta2), residual=residual)
    return out, params


def _base_network(D: int, taps: np.ndarray, b_h: float, act: Activation, conv2=None) -> Network:
    return Network(
        1,
        D,
        taps,
        np.array([b_h]),
        np.zeros(D),
        0.0,
        act,
        None if conv2 is None else conv2[0],
        None if conv2 is None else np.array([conv2[1]]),
    )


def design_relu_positive(D: int, delta: float = REF_DELTA, alpha: float = 1.0, b_h: float | None = None, tol: float = 1e-6) -> Network:
    """Single-layer ReLU estimator for positive-polarity pulses (zero left half, affine right half)."""
    if D < 16:
        raise ValueError("D must be >= 16")
    b_h = alpha * delta / 4 if b_h is None else b_h
    if not 0 < b_h < alpha * delta / 2:
        raise DesignInfeasible(f"need 0 < b_h < alpha*delta/2 = {alpha * delta / 2:g}, got {b_h:g}")
    net = _base_network(D, derivative_filter(alpha), b_h, Activation("relu"))
    net, p = calibrate_head(net, "right_affine", tol=tol)
    p.alpha, p.b_h = alpha, b_h
    net.provenance = {"design": "prop1", "params": p.to_dict(), "delta": delta}
    return net


def design_two_layer(D: int, delta: float = REF_DELTA, alpha: float = 1.0, tol: float = 1e-6) -> Network:
    """Two ReLU layers: derivative filter, then a negated unit impulse with the same bias; V-shaped head."""
    if D < 16:
        raise ValueError("D must be >= 16")
    b_h = alpha * delta / 4
    impulse = np.zeros(TAPS)
    impulse[TAPS // 2] = -1.0
    net = _base_network(D, derivative_filter(alpha), b_h, Activation("relu"), conv2=(impulse, b_h))
    net, p = calibrate_head(net, "v_shape", tol=tol)
    p.alpha, p.b_h = alpha, b_h
    net.provenance = {"design": "two_layer", "params": p.to_dict(), "delta": delta}
    return net


def sigmoid_gain_bound(tau: float, b_h: float, delta: float) -> float:
    return 2 * (tau - b_h) / delta


def design_sigmoid(
    D: int,
    delta: float = REF_DELTA,
    tau: float = 2.0,
    b_h: float | None = None,
    alpha: float | None = None,
    tol: float = 1e-6,
) -> Network:
    """Single-layer piecewise-sigmoid estimator for both polarities.

    Defaults: ``b_h = -2 tau`` and ``alpha = 2 (tau - b_h) / delta + 2 tau / delta``,
    which puts the background in the lower plateau and every admissible
    upward peak in the upper one.
    """
    if D < 16:
        raise ValueError("D must be >= 16")
    b_h = -2 * tau if b_h is None else b_h
    bound = sigmoid_gain_bound(tau, b_h, delta)
    alpha = bound + 2 * tau / delta if alpha is None else alpha
    if not b_h < -tau:
        raise DesignInfeasible(f"need b_h < -tau = {-tau:g}, got {b_h:g}")
    if not alpha > bound:
        raise DesignInfeasible(f"need alpha > 2(tau - b_h)/delta = {bound:g}, got {alpha:g}")
    net = _base_network(D, derivative_filter(alpha), b_h, Activation("piecewise_sigmoid", tau))
    net, p = calibrate_head(net, "v_shape", tol=tol)
    p.alpha, p.b_h, p.tau = alpha, b_h, tau
    net.provenance = {"design": "sigmoid", "params": p.to_dict(), "delta": delta}
    return net


def sigmoid_unbiased_variant(D: int, delta: float = REF_DELTA, tau: float = 2.0, alpha: float | None = None) -> Network:
    """``b_h = 0`` with a high gain and the calibrated V head of :func:`design_sigmoid`.

    The activated signal of a pulse and of its polarity flip are mirror
    images about the plateau midpoint 1/2, so any symmetric head returns the
    same constant for every input.
    """
    ref = design_sigmoid(D, delta, tau)
    alpha = 4 * tau / delta if alpha is None else alpha
    if not alpha > 2 * tau / delta:
        raise DesignInfeasible("need alpha > 2 tau / delta")
    net = _base_network(D, derivative_filter(alpha), 0.0, Activation("piecewise_sigmoid", tau))
    net = net.with_params({**net.params(), "head_w": ref.head_w, "head_b": np.array([ref.head_b])})
    net.provenance = {"design": "sigmoid_unbiased", "alpha": alpha, "tau": tau, "delta": delta}
    return net


def design_higher_order(k: int, D: int, alpha: float = 1.0, b_h: float = 0.0, head: np.ndarray | None = None, b_a: float = 0.25) -> Network:
    """Single-layer ReLU net with a ``k``-sign-change filter; head defaults to zero."""
    net = _base_network(D, higher_order_filter(k, alpha), b_h, Activation("relu"))
    if head is not None:
        net = net.with_params({**net.params(), "head_w": np.asarray(head, dtype=np.float64)})
    net = net.with_params({**net.params(), "head_b": np.array([b_a])})
    net.provenance = {"design": f"higher_order({k})", "alpha": alpha}
    return net


DESIGNS = {
    "prop1": design_relu_positive,
    "two_layer": design_two_layer,
    "sigmoid": design_sigmoid,
}
