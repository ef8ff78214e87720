"""Training protocol: MSE on the radius, L2 on weights only, Adam (1D) or SGD (2D)."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .nncore import TAPS, Activation, Network, batched_loss, predict
from .synthgen import ConfigError, Dataset, GenConfig, gen_dataset, make_rng

log = logging.getLogger(__name__)

TRAIN, VAL, TEST = 0, 1, 2


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetShape:
    dims: int = 1
    D: int = 32
    channels: int = 1
    depth: int = 1
    activation: str = "relu"
    tau: float = 2.0

    def __post_init__(self):
        if self.dims not in (1, 2):
            raise ConfigError("dims", "must be 1 or 2")
        if self.channels < 1:
            raise ConfigError("channels", "must be >= 1")
        if self.depth not in (1, 2):
            raise ConfigError("depth", "must be 1 or 2")
        if self.depth == 2 and (self.dims != 1 or self.channels != 1):
            raise ConfigError("depth", "depth 2 is only defined for dims=1, channels=1")
        if self.activation not in ("relu", "piecewise_sigmoid"):
            raise ConfigError("activation", f"unknown activation {self.activation!r}")

    def act(self) -> Activation:
        return Activation(self.activation, self.tau)


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    lr: float | None = None  # None -> 0.005 (adam) / 0.001 (sgd)
    batch_size: int = 32
    n_train: int = 10000
    n_val: int = 10000
    n_test: int = 10000
    l2_conv: float = 1e-4
    l2_head: float = 1e-4
    epochs: int | None = None  # None -> 500 (adam) / 300 (sgd)
    seed: int = 0
    shuffle_seed: int = 0
    init_scheme: str = "fan_in_uniform"
    sgd_decay: float = 0.999
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer", f"must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.lr is None:
            object.__setattr__(self, "lr", 0.005 if self.optimizer == "adam" else 0.001)
        if self.epochs is None:
            object.__setattr__(self, "epochs", 500 if self.optimizer == "adam" else 300)
        object.__setattr__(self, "betas", tuple(self.betas))
        if not self.lr > 0:
            raise ConfigError("lr", "must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if self.l2_conv < 0 or self.l2_head < 0:
            raise ConfigError("l2_conv" if self.l2_conv < 0 else "l2_head", "must be >= 0")
        if self.epochs < 1:
            raise ConfigError("epochs", "must be >= 1")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ConfigError("n_train", "dataset sizes must be >= 1")
        if self.init_scheme not in ("fan_in_uniform", "zeros"):
            raise ConfigError("init_scheme", f"unknown scheme {self.init_scheme!r}")
        if not 0 < self.sgd_decay <= 1:
            raise ConfigError("sgd_decay", "must lie in (0, 1]")


def init_weights(shape: NetShape, scheme: str, rng: np.random.Generator) -> Network:
    """Weights ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero; or all zeros."""
    C, D, dims = shape.channels, shape.D, shape.dims
    sizes = {
        "conv1_w": ((C,) + (TAPS,) * dims, TAPS**dims),
        "conv2_w": ((1, TAPS), TAPS),
        "head_w": ((C * D**dims,), C * D**dims),
    }
    w = {}
    for key, (shp, fan_in) in sizes.items():
        if key == "conv2_w" and shape.depth == 1:
            continue
        if scheme == "zeros":
            w[key] = np.zeros(shp)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            w[key] = rng.uniform(-bound, bound, size=shp)
    return Network(
        dims,
        D,
        w["conv1_w"],
        np.zeros(C),
        w["head_w"],
        0.0,
        shape.act(),
        w.get("conv2_w"),
        np.zeros(1) if shape.depth == 2 else None,
    )


class Adam:
    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        out = {}
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            m = self.m.get(k, np.zeros_like(p))
            v = self.v.get(k, np.zeros_like(p))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            out[k] = p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return out

    def end_epoch(self) -> None:
        pass


class SGD:
    """Plain SGD; the rate is multiplied by ``decay`` after every epoch."""

    def __init__(self, lr: float, decay: float = 1.0):
        self.lr = lr
        self.decay = decay

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        return {k: p - self.lr * grads[k] for k, p in params.items()}

    def end_epoch(self) -> None:
        self.lr *= self.decay


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.lr, cfg.betas, cfg.adam_eps)
    return SGD(cfg.lr, cfg.sgd_decay)


def epoch_permutation(shuffle_seed: int, epoch: int, n: int) -> np.ndarray:
    return make_rng(shuffle_seed, epoch).permutation(n)


@dataclass
class TrainHistory:
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    best_epoch: int = -1
    final: Network | None = None
    best: Network | None = None
    wall_clock: float = 0.0

    def rows(self):
        return [(i + 1, t, v) for i, (t, v) in enumerate(zip(self.train_mse, self.val_mse))]


def mse(net: Network, ds: Dataset) -> float:
    return float(np.mean((predict(net, ds.X) - ds.r) ** 2))


def make_splits(gen: GenConfig, cfg: TrainConfig) -> tuple[Dataset, Dataset, Dataset]:
    return gen_dataset(gen, cfg.n_train, TRAIN), gen_dataset(gen, cfg.n_val, VAL), gen_dataset(gen, cfg.n_test, TEST)


def fit(
    net: Network,
    train: Dataset,
    val: Dataset,
    cfg: TrainConfig,
    progress=None,
) -> tuple[Network, TrainHistory]:
    """Run ``cfg.epochs`` epochs from ``net``; return the best-validation network."""
    opt = make_optimizer(cfg)
    params = {k: v.copy() for k, v in net.params().items()}
    hist = TrainHistory()
    best_val = np.inf
    t0 = time.perf_counter()
    n = len(train)
    for epoch in range(cfg.epochs):
        perm = epoch_permutation(cfg.shuffle_seed, epoch, n)
        sq_err = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, grads = batched_loss(net, train.X[idx], train.r[idx], cfg.l2_conv, cfg.l2_head)
            sq_err += loss * len(idx)
            params = opt.step(params, grads)
            net = net.with_params(params)
        opt.end_epoch()
        # train MSE is the running mean over the epoch's batches
        tr, va = sq_err / n, mse(net, val)
        if not (np.isfinite(tr) and np.isfinite(va)):
            raise DivergenceError(f"non-finite loss at epoch {epoch + 1}: train={tr}, val={va}")
        hist.train_mse.append(tr)
        hist.val_mse.append(va)
        if va < best_val:
            best_val = va
            hist.best_epoch = epoch + 1
            hist.best = net.copy()
        if progress is not None:
            progress(epoch + 1, tr, va)
    hist.final = net
    hist.wall_clock = time.perf_counter() - t0
    return hist.best, hist


def train(
    cfg: TrainConfig,
    gen: GenConfig,
    shape: NetShape,
    splits: tuple[Dataset, Dataset, Dataset] | None = None,
    progress=None,
) -> tuple[Network, TrainHistory]:
    if shape.dims != gen.dims or shape.D != gen.D:
        raise ConfigError("dims", f"network ({shape.dims}D, D={shape.D}) does not match data ({gen.dims}D, D={gen.D})")
    train_ds, val_ds, _ = splits if splits is not None else make_splits(gen, cfg)
    net = init_weights(shape, cfg.init_scheme, make_rng(cfg.seed, 7))
    best, hist = fit(net, train_ds, val_ds, cfg, progress)
    best.provenance = {
        "trained": True,
        "train_config": config_dict(cfg),
        "gen_config": gen.to_dict(),
        "shape": dataclasses.asdict(shape),
        "best_epoch": hist.best_epoch,
    }
    return best, hist


def config_dict(cfg) -> dict:
    d = dataclasses.asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
