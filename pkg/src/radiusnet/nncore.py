"""Minimal CNN family: 5-tap correlation, pointwise activation, dense head.

    estimate = a . act(h * x + b_h) + b_a

with an optional second single-channel 1D correlation layer between the first
activation and the head.  Everything is float64.  Correlation uses zero
padding, so ``f_h[i] = sum_j t[j] * x[i + j - 2]``.

Arrays are batched: 1D inputs are ``(B, D)`` and 2D inputs ``(B, D, D)``.
Feature maps carry a channel axis, ``(B, C, D)`` / ``(B, C, D, D)``, and the
head sees them flattened channel-major then row-major.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

TAPS = 5
PAD = TAPS // 2
WEIGHT_KEYS = ("conv1_w", "conv2_w", "head_w")
SNAPSHOT_FORMAT = "radiusnet-network"


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Activation:
    kind: str = "relu"
    tau: float = 2.0

    def __post_init__(self):
        if self.kind not in ("relu", "piecewise_sigmoid"):
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "piecewise_sigmoid" and not self.tau > 0:
            raise ValueError("tau must be > 0")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "relu":
            return np.maximum(x, 0.0)
        return np.clip(x / (2 * self.tau) + 0.5, 0.0, 1.0)

    def grad(self, x: np.ndarray) -> np.ndarray:
        # relu'(0) = 0; the sigmoid kinks take the interior slope
        if self.kind == "relu":
            return (x > 0).astype(np.float64)
        return (np.abs(x) <= self.tau) * (1.0 / (2 * self.tau))


def piecewise_sigmoid(x, tau: float = 2.0):
    return Activation("piecewise_sigmoid", tau)(np.asarray(x, dtype=np.float64))


@dataclass
class Network:
    dims: int
    D: int
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    head_w: np.ndarray
    head_b: float = 0.0
    act: Activation = field(default_factory=Activation)
    conv2_w: np.ndarray | None = None
    conv2_b: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.conv1_w = np.asarray(self.conv1_w, dtype=np.float64)
        self.conv1_b = np.asarray(self.conv1_b, dtype=np.float64).reshape(-1)
        self.head_w = np.asarray(self.head_w, dtype=np.float64).reshape(-1)
        self.head_b = float(self.head_b)
        if self.conv2_w is not None:
            self.conv2_w = np.asarray(self.conv2_w, dtype=np.float64).reshape(1, TAPS)
            self.conv2_b = np.asarray(self.conv2_b if self.conv2_b is not None else 0.0, dtype=np.float64).reshape(1)
        self.check()

    @property
    def channels(self) -> int:
        return self.conv1_w.shape[0]

    @property
    def depth(self) -> int:
        return 1 if self.conv2_w is None else 2

    @property
    def feature_shape(self) -> tuple[int, ...]:
        return (self.channels,) + (self.D,) * self.dims

    def check(self) -> None:
        if self.dims not in (1, 2):
            raise ShapeError(f"dims must be 1 or 2, got {self.dims}")
        if self.conv1_w.shape[1:] != (TAPS,) * self.dims:
            raise ShapeError(f"conv1 taps have shape {self.conv1_w.shape}, expected (C,{'5' if self.dims == 1 else '5,5'})")
        if self.conv1_b.shape != (self.channels,):
            raise ShapeError("conv1 bias must have one entry per channel")
        if self.head_w.size != int(np.prod(self.feature_shape)):
            raise ShapeError(f"head has {self.head_w.size} weights, upstream activation has {int(np.prod(self.feature_shape))}")
        if self.conv2_w is not None and (self.dims != 1 or self.channels != 1):
            raise ShapeError("a second convolution layer requires dims=1 and C=1")

    # -- parameter views -----------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        p = {"conv1_w": self.conv1_w, "conv1_b": self.conv1_b}
        if self.conv2_w is not None:
            p["conv2_w"] = self.conv2_w
            p["conv2_b"] = self.conv2_b
        p["head_w"] = self.head_w
        p["head_b"] = np.array([self.head_b])
        return p

    def with_params(self, params: dict[str, np.ndarray]) -> "Network":
        return Network(
            self.dims,
            self.D,
            params["conv1_w"].copy(),
            params["conv1_b"].copy(),
            params["head_w"].copy(),
            float(np.asarray(params["head_b"]).reshape(-1)[0]),
            self.act,
            params["conv2_w"].copy() if "conv2_w" in params else None,
            params["conv2_b"].copy() if "conv2_b" in params else None,
            dict(self.provenance),
        )

    def copy(self) -> "Network":
        return self.with_params(self.params())

    def head_map(self) -> np.ndarray:
        """Head weights reshaped to the feature-map layout."""
        return self.head_w.reshape(self.feature_shape)


def zeros_network(dims: int, D: int, channels: int = 1, depth: int = 1, act: Activation | None = None) -> Network:
    C = channels
    return Network(
        dims,
        D,
        np.zeros((C,) + (TAPS,) * dims),
        np.zeros(C),
        np.zeros(C * D**dims),
        0.0,
        act or Activation(),
        np.zeros((1, TAPS)) if depth == 2 else None,
        np.zeros(1) if depth == 2 else None,
    )


# -- correlation kernels -------------------------------------------------------


def _windows(x: np.ndarray, dims: int) -> np.ndarray:
    """Zero-padded 5-wide patches as a ``(B * D**dims, 5**dims)`` matrix."""
    if dims == 1:
        xp = np.pad(x, ((0, 0), (PAD, PAD)))
        win = sliding_window_view(xp, TAPS, axis=1)
    else:
        xp = np.pad(x, ((0, 0), (PAD, PAD), (PAD, PAD)))
        win = sliding_window_view(xp, (TAPS, TAPS), axis=(1, 2))
    return win.reshape(-1, TAPS**dims)


def correlate(x: np.ndarray, taps: np.ndarray, dims: int, patches: np.ndarray | None = None) -> np.ndarray:
    """Single-input-channel correlation of ``x`` (B, *grid) with ``taps`` (C, *kernel) -> (B, C, *grid)."""
    B = x.shape[0]
    grid = x.shape[1:]
    if patches is None:
        patches = _windows(x, dims)
    C = taps.shape[0]
    out = patches @ taps.reshape(C, -1).T
    return np.moveaxis(out.reshape((B,) + grid + (C,)), -1, 1)


def _correlate_input_grad(g: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Adjoint of 1D single-channel correlation w.r.t. its input; g is (B, D)."""
    gp = np.pad(g, ((0, 0), (PAD, PAD)))
    win = sliding_window_view(gp, TAPS, axis=1)
    return win @ taps[::-1]


# -- forward / backward --------------------------------------------------------


@dataclass
class ForwardTrace:
    """Intermediate representations for one sample.

    ``f_h``, ``f_hb`` and ``f_sigma`` hold one entry per convolution layer.
    """

    f_h: list[np.ndarray]
    f_hb: list[np.ndarray]
    f_sigma: list[np.ndarray]
    f_aodot: np.ndarray
    f_int: float
    estimate: float


def _check_input(net: Network, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape == (net.D,) * net.dims:
        X = X[None]
    if X.shape[1:] != (net.D,) * net.dims:
        raise ShapeError(f"input grid {X.shape[1:]} does not match network grid {(net.D,) * net.dims}")
    return X


def forward_batch(net: Network, X: np.ndarray, keep: bool = True) -> dict[str, np.ndarray]:
    """Run the network on a batch.

    With ``keep=True`` the result holds the per-layer stages ``f_h{k}``,
    ``f_hb{k}``, ``f_sigma{k}`` (k = 1, 2) shaped ``(B, C, *grid)``, plus
    ``f_aodot`` (B, C*D**dims), ``f_int`` and ``estimate``, where the estimate
    is literally ``f_int + b_a``.  With ``keep=False`` the head is applied as a
    matrix product and only what :func:`backward_batch` needs is kept.

    Internally feature maps are pixel-major ``(B * D**dims, C)``.
    """
    X = _check_input(net, X)
    B = X.shape[0]
    C = net.channels
    grid = X.shape[1:]
    patches = _windows(X, net.dims)
    pre = patches @ net.conv1_w.reshape(C, -1).T
    pre += net.conv1_b
    act = net.act(pre)
    cache: dict[str, np.ndarray] = {"patches1": patches, "pre1": pre}
    stages = [(patches @ net.conv1_w.reshape(C, -1).T, pre, act)] if keep else []
    if net.conv2_w is not None:
        a1 = act.reshape(B, -1)
        h2 = correlate(a1, net.conv2_w, 1).reshape(-1, 1)
        pre2 = h2 + net.conv2_b
        act = net.act(pre2)
        cache.update(act1=a1, pre2=pre2)
        if keep:
            stages.append((h2, pre2, act))
    features = act.reshape(B, -1)
    cache["features"] = features
    if not keep:
        cache["estimate"] = features @ _head_pixel_major(net) + net.head_b
        return cache

    def channel_major(m):
        return np.moveaxis(m.reshape((B,) + grid + (m.shape[-1],)), -1, 1)

    for k, (h, hb, sig) in enumerate(stages, start=1):
        cache[f"f_h{k}"] = channel_major(h)
        cache[f"f_hb{k}"] = channel_major(hb)
        cache[f"f_sigma{k}"] = channel_major(sig)
    f_aodot = cache[f"f_sigma{len(stages)}"].reshape(B, -1) * net.head_w
    cache["f_aodot"] = f_aodot
    cache["f_int"] = f_aodot.sum(axis=1)
    cache["estimate"] = cache["f_int"] + net.head_b
    return cache


def _head_pixel_major(net: Network) -> np.ndarray:
    return net.head_w.reshape(net.channels, -1).T.ravel()


def forward(net: Network, x: np.ndarray) -> ForwardTrace:
    c = forward_batch(net, x)
    if c["estimate"].shape[0] != 1:
        raise ShapeError("forward() takes a single sample; use forward_batch for batches")
    layers = range(1, net.depth + 1)
    return ForwardTrace(
        [c[f"f_h{k}"][0] for k in layers],
        [c[f"f_hb{k}"][0] for k in layers],
        [c[f"f_sigma{k}"][0] for k in layers],
        c["f_aodot"][0],
        float(c["f_int"][0]),
        float(c["estimate"][0]),
    )


def predict(net: Network, X: np.ndarray, batch: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if batch is None:
        batch = max(1, 2**16 // net.D**net.dims)
    return np.concatenate([forward_batch(net, X[i : i + batch], keep=False)["estimate"] for i in range(0, len(X), batch)])


def backward_batch(net: Network, cache: dict[str, np.ndarray], upstream: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of ``sum_b upstream[b] * estimate[b]`` w.r.t. every parameter."""
    g = np.asarray(upstream, dtype=np.float64).reshape(-1)
    B = g.shape[0]
    C = net.channels
    grads: dict[str, np.ndarray] = {}
    grads["head_b"] = np.array([g.sum()])
    grads["head_w"] = (g @ cache["features"]).reshape(-1, C).T.ravel()
    d_act = np.multiply.outer(g, _head_pixel_major(net)).reshape(-1, C)
    if net.conv2_w is not None:
        d_pre2 = (d_act * net.act.grad(cache["pre2"])).reshape(B, -1)
        grads["conv2_b"] = np.array([d_pre2.sum()])
        win = sliding_window_view(np.pad(cache["act1"], ((0, 0), (PAD, PAD))), TAPS, axis=1)
        grads["conv2_w"] = np.einsum("bi,bij->j", d_pre2, win)[None, :]
        d_act = _correlate_input_grad(d_pre2, net.conv2_w[0]).reshape(-1, 1)
    d_pre = d_act * net.act.grad(cache["pre1"])
    grads["conv1_b"] = d_pre.sum(axis=0)
    grads["conv1_w"] = (d_pre.T @ cache["patches1"]).reshape(net.conv1_w.shape)
    return {k: grads[k] for k in net.params()}


def backward(net: Network, x: np.ndarray, upstream: float = 1.0) -> dict[str, np.ndarray]:
    cache = forward_batch(net, x)
    return backward_batch(net, cache, np.array([upstream]))


def batched_loss(
    net: Network, X: np.ndarray, y: np.ndarray, l2_conv: float = 0.0, l2_head: float = 0.0
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared error and its gradient, plus L2 gradients on weights only.

    The returned loss is the plain MSE; the L2 terms ``l2 * ||w||^2`` only
    enter the gradients (``2 * l2 * w``).  Biases are never penalised.
    """
    y = np.asarray(y, dtype=np.float64)
    cache = forward_batch(net, X, keep=False)
    err = cache["estimate"] - y
    mse = float(np.mean(err**2))
    grads = backward_batch(net, cache, 2.0 * err / len(y))
    for key, coef in (("conv1_w", l2_conv), ("conv2_w", l2_conv), ("head_w", l2_head)):
        if coef and key in grads:
            grads[key] = grads[key] + 2.0 * coef * getattr(net, key)
    return mse, grads


def l2_penalty(net: Network, l2_conv: float, l2_head: float) -> float:
    total = l2_conv * float(np.sum(net.conv1_w**2)) + l2_head * float(np.sum(net.head_w**2))
    if net.conv2_w is not None:
        total += l2_conv * float(np.sum(net.conv2_w**2))
    return total


# -- snapshots -------------------------------------------------------------------


def to_dict(net: Network) -> dict:
    layers = [{"name": "conv1", "shape": list(net.conv1_w.shape), "taps": net.conv1_w.ravel().tolist(), "bias": net.conv1_b.tolist()}]
    if net.conv2_w is not None:
        layers.append({"name": "conv2", "shape": list(net.conv2_w.shape), "taps": net.conv2_w.ravel().tolist(), "bias": net.conv2_b.tolist()})
    return {
        "format": SNAPSHOT_FORMAT,
        "version": 1,
        "dims": net.dims,
        "D": net.D,
        "channels": net.channels,
        "activation": {"kind": net.act.kind, "tau": net.act.tau},
        "layers": layers,
        "head": {"shape": [net.head_w.size], "layout": "channel-major, row-major", "weights": net.head_w.tolist(), "bias": net.head_b},
        "provenance": net.provenance,
    }


def from_dict(d: dict) -> Network:
    if d.get("format") != SNAPSHOT_FORMAT:
        raise ValueError("not a network snapshot")
    layers = {layer["name"]: layer for layer in d["layers"]}
    c1 = layers["conv1"]
    c2 = layers.get("conv2")
    return Network(
        d["dims"],
        d["D"],
        np.array(c1["taps"], dtype=np.float64).reshape(c1["shape"]),
        np.array(c1["bias"], dtype=np.float64),
        np.array(d["head"]["weights"], dtype=np.float64),
        d["head"]["bias"],
        Activation(d["activation"]["kind"], d["activation"]["tau"]),
        np.array(c2["taps"], dtype=np.float64).reshape(c2["shape"]) if c2 else None,
        np.array(c2["bias"], dtype=np.float64) if c2 else None,
        d.get("provenance", {}),
    )


def save_network(net: Network, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_dict(net), indent=1))
    return path


def load_network(path: str | Path) -> Network:
    return from_dict(json.loads(Path(path).read_text()))
