"""Multi-branch DeepONet for recovering insult profiles from dilatation maps.

Every branch maps one input block to a ``q``-vector; the branch vectors are
multiplied elementwise and the result is contracted with the trunk features
of each query point::

    G(u)(y) = sum_k  b1_k(u1) * b2_k(u2) * ... * t_k(y)

All parameters sit in one flat float64 vector so the optimizers see a single
array. Branch inputs are standardized with statistics frozen from the
training set; the pressure flag is mapped from {0, 1} to {-1, +1} so that a
normotensive sample does not zero the whole product at initialization.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import FLAG_BLOCKS, Dataset, add_noise, channel_scales, input_blocks
from .errors import NumericalError, StructuralError
from .nn import AdamState, LBFGSState, Sequential, adam_step, cnn, fnn, lbfgs_minimize
from .nn.checkpoint import load_checkpoint, save_checkpoint

SENSOR_DIMS = {"sensor25": 25, "sensor9": 9}


@dataclass(frozen=True)
class ArchConfig:
    q: int = 128
    fnn_depth: int = 4
    fnn_width: int = 128
    trunk_depth: int = 4
    trunk_width: int = 128
    cnn_filters: tuple[int, ...] = (8, 16)
    cnn_kernel: int = 3
    activation: str = "tanh"
    location_dim: int = 3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn_filters"] = list(self.cnn_filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        d = dict(d)
        if "cnn_filters" in d:
            d["cnn_filters"] = tuple(int(f) for f in d["cnn_filters"])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    adam_iters: int = 20000
    lr: float = 1e-3
    lbfgs_iters: int = 2000
    seed: int = 0
    trials: int = 5
    log_every: int = 0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.adam_iters < 0 or self.lbfgs_iters < 0:
            raise ValueError("iteration counts must be non-negative")


def block_shapes(mode: str, grid_shape=(21, 20), location_dim: int = 3) -> dict[str, tuple[int, ...]]:
    if mode == "image":
        return {"img_ld": (*grid_shape, 1), "img_d": (*grid_shape, 1), "flag": (1,)}
    n = SENSOR_DIMS.get(mode)
    if n is None:
        raise StructuralError(f"unknown mode {mode!r}")
    return {"u1": (n,), "u2": (location_dim,), "u3": (n,), "u4": (location_dim,), "u5": (1,)}


class DeepONet:
    def __init__(self, mode: str, arch: ArchConfig | None = None, grid_shape=(21, 20)):
        self.mode = mode
        self.arch = arch or ArchConfig()
        self.grid_shape = tuple(grid_shape)
        a = self.arch
        shapes = block_shapes(mode, self.grid_shape, a.location_dim)
        self.block_names = list(input_blocks(mode))
        self.branches: dict[str, Sequential] = {}
        offset = 0
        for name in self.block_names:
            shp = shapes[name]
            if len(shp) == 3:
                net = cnn(shp, a.q, a.cnn_filters, a.cnn_kernel, 2, a.activation, offset)
            else:
                net = fnn(shp[0], a.q, a.fnn_depth, a.fnn_width, a.activation, offset)
            self.branches[name] = net
            offset = net.end
        self.trunk = fnn(3, a.q, a.trunk_depth, a.trunk_width, a.activation, offset)
        self.n_params = self.trunk.end
        self.scalers: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    # -- parameters ---------------------------------------------------------

    def init_params(self, rng) -> np.ndarray:
        theta = np.zeros(self.n_params)
        for net in [*self.branches.values(), self.trunk]:
            net.init(theta, rng)
        return theta

    def param_counts(self) -> dict[str, int]:
        out = {name: net.size for name, net in self.branches.items()}
        out["trunk"] = self.trunk.size
        out["total"] = self.n_params
        return out

    # -- input scaling --------------------------------------------------------

    def fit_scalers(self, inputs: dict[str, np.ndarray]) -> None:
        """Freeze per-feature (vectors) or pooled (images) mean and spread."""
        self.scalers = {}
        for name in self.block_names:
            if name in FLAG_BLOCKS:
                continue
            x = np.asarray(inputs[name], dtype=np.float64)
            if x.ndim > 2:
                mu, sd = np.array(x.mean()), np.array(x.std())
            else:
                mu, sd = x.mean(axis=0), x.std(axis=0)
            sd = np.where(sd > 1e-12, sd, 1.0)
            self.scalers[name] = (mu, sd)

    def prepare(self, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        missing = [n for n in self.block_names if n not in inputs]
        if missing:
            raise StructuralError(f"model mode {self.mode} needs inputs {missing}")
        out = {}
        for name in self.block_names:
            x = np.asarray(inputs[name], dtype=np.float64)
            if name in FLAG_BLOCKS:
                x = 2.0 * x - 1.0
            elif name in self.scalers:
                mu, sd = self.scalers[name]
                x = (x - mu) / sd
            if x.ndim == 3:
                x = x[..., None]
            out[name] = x
        return out

    # -- evaluation -----------------------------------------------------------

    def _branch_features(self, theta, prepared):
        feats, caches = {}, {}
        for name in self.block_names:
            feats[name], caches[name] = self.branches[name].forward(theta, prepared[name])
        return feats, caches

    def forward(self, theta: np.ndarray, inputs: dict[str, np.ndarray], points: np.ndarray) -> np.ndarray:
        """Predictions of shape ``(n_samples, n_points)``."""
        feats, _ = self._branch_features(theta, self.prepare(inputs))
        b = np.ones_like(next(iter(feats.values())))
        for f in feats.values():
            b = b * f
        t, _ = self.trunk.forward(theta, np.asarray(points, dtype=np.float64))
        return b @ t.T

    def loss_and_grad(self, theta, prepared, targets, points, want_grad: bool = True):
        """Sum of squared errors over samples and points, and its gradient."""
        feats, bcache = self._branch_features(theta, prepared)
        names = self.block_names
        vals = [feats[n] for n in names]
        # prefix/suffix products give the product of all other branches without division
        prefix = [np.ones_like(vals[0])]
        for v in vals[:-1]:
            prefix.append(prefix[-1] * v)
        suffix = [np.ones_like(vals[0])]
        for v in reversed(vals[1:]):
            suffix.append(suffix[-1] * v)
        suffix.reverse()
        b = prefix[-1] * vals[-1]
        t, tcache = self.trunk.forward(theta, points)
        resid = b @ t.T - targets
        loss = float(np.sum(resid * resid))
        if not want_grad:
            return loss, None
        grad = np.zeros_like(theta)
        d_pred = 2.0 * resid
        d_b = d_pred @ t
        d_t = d_pred.T @ b
        self.trunk.backward(theta, tcache, d_t, grad, input_grad=False)
        for k, n in enumerate(names):
            self.branches[n].backward(theta, bcache[n], d_b * prefix[k] * suffix[k], grad, input_grad=False)
        return loss, grad

    # -- persistence ------------------------------------------------------------

    def topology(self) -> dict:
        return {
            "mode": self.mode,
            "arch": self.arch.to_dict(),
            "grid_shape": list(self.grid_shape),
            "branches": {n: net.spec() for n, net in self.branches.items()},
            "trunk": self.trunk.spec(),
            "scalers": {n: [np.atleast_1d(m).tolist(), np.atleast_1d(s).tolist()] for n, (m, s) in self.scalers.items()},
        }

    @classmethod
    def from_topology(cls, topo: dict) -> "DeepONet":
        model = cls(topo["mode"], ArchConfig.from_dict(topo["arch"]), tuple(topo["grid_shape"]))
        for name, (m, s) in topo.get("scalers", {}).items():
            m, s = np.array(m), np.array(s)
            if m.size == 1 and name.startswith("img_"):
                m, s = m.reshape(()), s.reshape(())
            model.scalers[name] = (m, s)
        return model


def save_model(path, model: DeepONet, theta: np.ndarray, meta: dict | None = None) -> None:
    save_checkpoint(path, model.topology(), theta, meta)


def load_model(path) -> tuple[DeepONet, np.ndarray, dict]:
    topo, theta, meta = load_checkpoint(path)
    model = DeepONet.from_topology(topo)
    if theta.size != model.n_params:
        raise StructuralError(f"checkpoint has {theta.size} parameters, topology needs {model.n_params}")
    return model, theta, meta


# ----------------------------------------------------------------------------
# training and evaluation


@dataclass
class TrainResult:
    theta: np.ndarray
    history: list[float]
    adam_history: list[float] = field(default_factory=list)
    lbfgs_history: list[float] = field(default_factory=list)
    seconds: float = 0.0


def train(model: DeepONet, data: Dataset, cfg: TrainConfig, seed: int | None = None, log=None) -> TrainResult:
    """Xavier init, full-batch Adam, then L-BFGS. Deterministic for a given seed."""
    if data.mode != model.mode:
        raise StructuralError(f"dataset mode {data.mode} does not match model mode {model.mode}")
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    model.fit_scalers(data.inputs)
    prepared = model.prepare(data.inputs)
    targets = np.asarray(data.targets, dtype=np.float64)
    points = data.query_points
    theta = model.init_params(rng)

    def fg(th):
        loss, grad = model.loss_and_grad(th, prepared, targets, points)
        if not math.isfinite(loss):
            raise NumericalError(f"non-finite training loss after {len(adam_hist)} Adam steps")
        return loss, grad

    adam_hist: list[float] = []
    state = AdamState.fresh(theta.size, cfg.lr)
    for it in range(cfg.adam_iters):
        loss, grad = fg(theta)
        adam_hist.append(loss)
        theta = adam_step(state, theta, grad)
        if log and cfg.log_every and it % cfg.log_every == 0:
            log(f"adam {it} loss {loss:.6g}")
    lbfgs_hist: list[float] = []
    if cfg.lbfgs_iters:
        theta, _, lbfgs_hist = lbfgs_minimize(fg, theta, max_iter=cfg.lbfgs_iters, gtol=0.0)
    final, _ = model.loss_and_grad(theta, prepared, targets, points, want_grad=False)
    history = adam_hist + lbfgs_hist + [final]
    return TrainResult(theta, history, adam_hist, lbfgs_hist, time.perf_counter() - start)


def relative_l2(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-sample ``||pred - truth|| / ||truth||``; zero-norm samples give NaN."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    num = np.linalg.norm(pred - truth, axis=1)
    den = np.linalg.norm(truth, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(den > 0, num / den, np.nan)


def mean_relative_l2(pred, truth) -> float:
    err = relative_l2(pred, truth)
    bad = np.isnan(err)
    if bad.any():
        warnings.warn(f"{int(bad.sum())} sample(s) with zero true insult excluded from the error", RuntimeWarning)
    return float(np.mean(err[~bad]))


def predict(model: DeepONet, theta: np.ndarray, inputs: dict[str, np.ndarray], points: np.ndarray) -> np.ndarray:
    return model.forward(theta, inputs, points)


def predict_field(model: DeepONet, theta: np.ndarray, inputs: dict[str, np.ndarray], points=None, grid=None):
    """Raw and [0, 1]-clamped predictions at arbitrary points or at every node of ``grid``."""
    if points is None:
        if grid is None:
            raise ValueError("give query points or a grid")
        from .dataset import query_points

        points = query_points(grid)
    raw = model.forward(theta, inputs, points)
    clamped = np.clip(raw, 0.0, 1.0)
    if grid is not None:
        raw = raw.reshape(-1, *grid.shape)
        clamped = clamped.reshape(-1, *grid.shape)
    return raw, clamped


@dataclass
class TrialReport:
    seed: int
    err_clean: float
    err_noisy: float | None
    final_loss: float
    seconds: float


@dataclass
class EvalReport:
    mode: str
    n_train: int
    n_test: int
    n_params: int
    noise: float
    trials: list[TrialReport]

    @staticmethod
    def _stats(vals):
        arr = np.asarray(vals, dtype=np.float64)
        return float(arr.mean()), float(arr.std(ddof=0))

    @property
    def clean(self) -> tuple[float, float]:
        return self._stats([t.err_clean for t in self.trials])

    @property
    def noisy(self) -> tuple[float, float] | None:
        if any(t.err_noisy is None for t in self.trials):
            return None
        return self._stats([t.err_noisy for t in self.trials])

    def to_dict(self) -> dict:
        out = asdict(self)
        out["err_clean_mean"], out["err_clean_std"] = self.clean
        noisy = self.noisy
        out["err_noisy_mean"], out["err_noisy_std"] = noisy if noisy else (None, None)
        return out


def evaluate(
    mode: str,
    data: Dataset,
    cfg: TrainConfig,
    noise: float = 0.05,
    arch: ArchConfig | None = None,
    log=None,
    keep_models: bool = False,
):
    """Retrain ``cfg.trials`` times (seed = ``cfg.seed + trial``) and score the test split.

    Noise is drawn once per trial from a seeded generator and applied to the
    test inputs only, with scales taken from the clean test inputs.
    """
    train_set, test_set = data.train(), data.test()
    if len(test_set) == 0:
        raise ValueError("dataset has no test split")
    scales = channel_scales(test_set.inputs)
    trials, models = [], []
    n_params = 0
    for trial in range(cfg.trials):
        seed = cfg.seed + trial
        model = DeepONet(mode, arch, data.grid.shape)
        n_params = model.n_params
        res = train(model, train_set, cfg, seed=seed, log=log)
        pts = test_set.query_points
        clean = mean_relative_l2(model.forward(res.theta, test_set.inputs, pts), test_set.targets)
        noisy = None
        if noise > 0:
            noisy_inputs = add_noise(test_set.inputs, noise, np.random.default_rng([seed, 1]), scales)
            noisy = mean_relative_l2(model.forward(res.theta, noisy_inputs, pts), test_set.targets)
        trials.append(TrialReport(seed, clean, noisy, res.history[-1], res.seconds))
        if keep_models:
            models.append((model, res))
        if log:
            log(f"{mode} trial {trial} seed {seed}: clean {clean:.4%} noisy {noisy if noisy is None else f'{noisy:.4%}'} "
                f"({res.seconds:.1f}s)")
    report = EvalReport(mode, len(train_set), len(test_set), n_params, noise, trials)
    return (report, models) if keep_models else report
