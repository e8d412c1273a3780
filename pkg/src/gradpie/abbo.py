"""Active black-box optimization with surrogate gradients.

The black box is always queried in the forward pass; the surrogate only
supplies the input Jacobian used in the backward pass.  Two loops are
provided: :func:`offline_optimize` (surrogate trained once beforehand with
:func:`offline_train`) and :func:`online_optimize` (surrogate retrained on a
growing dataset every iteration).
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import Dataset, LocalSamplerConfig, NormStats, build_knn, local_sample, rank_select
from .losses import gradpie_loss, mae_loss, mse_loss
from .nn import AdamConfig, AdamState, MlpSurrogate

LOSSES = ("gradpie", "mae", "mse")


# -- objectives ---------------------------------------------------------------

class Objective:
    """Scalar task objective ``psi(y)`` on black-box outputs."""

    direction = "minimize"

    def evaluate(self, Y) -> np.ndarray:
        raise NotImplementedError

    def gradient_wrt_y(self, Y) -> np.ndarray:
        raise NotImplementedError

    def descent_gradient(self, Y) -> np.ndarray:
        """Gradient of the quantity being minimized (``-psi`` when maximizing)."""
        g = self.gradient_wrt_y(Y)
        return g if self.direction == "minimize" else -g

    def better(self, a, b) -> bool:
        return a < b if self.direction == "minimize" else a > b


class L1Target(Objective):
    """``psi(y) = ||y - target||_1``, minimized."""

    def __init__(self, target):
        self.target = np.asarray(target, dtype=float)

    def evaluate(self, Y):
        Y = np.asarray(Y, dtype=float)
        return np.abs(Y - self.target).sum(axis=-1)

    def gradient_wrt_y(self, Y):
        return np.sign(np.asarray(Y, dtype=float) - self.target)


class OutputValue(Objective):
    """``psi(y) = y[index]`` for scalar-output black boxes."""

    def __init__(self, direction="minimize", index=0):
        if direction not in ("minimize", "maximize"):
            raise ValueError(f"unknown direction {direction!r}")
        self.direction = direction
        self.index = index

    def evaluate(self, Y):
        return np.asarray(Y, dtype=float)[..., self.index]

    def gradient_wrt_y(self, Y):
        G = np.zeros_like(np.asarray(Y, dtype=float))
        G[..., self.index] = 1.0
        return G


# -- configuration ------------------------------------------------------------

@dataclass
class RunConfig:
    """Hyperparameters of one optimization run (names follow the algorithm)."""

    task: str = "analytic"
    hidden: list = field(default_factory=lambda: [256, 256])
    layernorm: bool = False
    loss: str = "gradpie"
    k: int = 8
    eta1: float = 1e-3
    eta2: float = 0.05
    l_epochs: int = 100
    epsilon: float = 0.0
    tau: int = 200
    n_init: int = 100
    n_s: int = 1
    sigma: float = 0.05
    n_best: int = 5
    batch_size: int = 64
    seed: int = 0
    direction: str = "minimize"
    warm_start: bool = True
    normalize: bool = True

    def __post_init__(self):
        self.hidden = [int(h) for h in self.hidden]
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.n_init < 2:
            raise ValueError("n_init must be >= 2")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not (self.eta1 > 0 and self.eta2 > 0):
            raise ValueError("learning rates eta1 and eta2 must be > 0")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.k < 1 or self.n_best < 1 or self.batch_size < 1 or self.n_s < 0:
            raise ValueError("k, n_best and batch_size must be >= 1; n_s >= 0")
        if self.direction not in ("minimize", "maximize"):
            raise ValueError(f"unknown direction {self.direction!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrajectoryRecord:
    iteration: int
    best_objective: float
    mean_objective: float
    queries: int
    surrogate_loss: float
    seed: int
    wall_time: float = 0.0
    candidates: np.ndarray | None = None

    CSV_FIELDS = ("iter", "best_objective", "mean_objective", "queries", "surrogate_loss", "seed")

    def csv_row(self) -> list:
        return [self.iteration, repr(float(self.best_objective)), repr(float(self.mean_objective)),
                self.queries, repr(float(self.surrogate_loss)), self.seed]


@dataclass
class OptimizeResult:
    x_best: np.ndarray
    best_objective: float
    trajectory: list
    dataset: Dataset | None = None
    surrogate: "Surrogate | None" = None
    error: str | None = None


# -- surrogate ----------------------------------------------------------------

class Surrogate:
    """An :class:`MlpSurrogate` acting in normalized coordinates.

    ``predict`` and ``vjp`` take and return raw (black-box) units.
    """

    def __init__(self, model: MlpSurrogate, stats: NormStats):
        self.model = model
        self.stats = stats

    @classmethod
    def create(cls, d_in, d_out, hidden, layernorm=False, seed=0, stats=None) -> "Surrogate":
        model = MlpSurrogate([d_in, *hidden, d_out], layernorm=layernorm, seed=seed)
        return cls(model, stats if stats is not None else NormStats.identity(d_in, d_out))

    def predict(self, X):
        Z = self.model.forward(self.stats.normalize_inputs(X))
        return self.stats.denormalize_outputs(Z)

    def vjp(self, X, U):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        dz = self.model.input_gradient(self.stats.normalize_inputs(X), U * self.stats.y_std)
        return dz / self.stats.x_std

    def jacobian(self, x):
        J = self.model.jacobian(self.stats.normalize_inputs(x))
        return J * self.stats.y_std[:, None] / self.stats.x_std[None, :]


class ExactGradient:
    """Gradient source backed by the black box's reference Jacobian."""

    def __init__(self, blackbox):
        self.blackbox = blackbox

    def vjp(self, X, U):
        return self.blackbox.vjp(X, U)


def train_surrogate(surrogate: Surrogate, dataset: Dataset, loss="gradpie", k=8,
                    l_epochs=100, batch_size=64, eta1=1e-3, epsilon=0.0, rng=None,
                    adam: AdamConfig | None = None) -> float:
    """Mini-batch Adam training; returns the mean loss of the last epoch.

    Stops early once an epoch's mean loss drops below ``epsilon``.  For the
    pairwise loss the neighbour outputs are recomputed for every batch.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    rng = np.random.default_rng(0) if rng is None else rng
    adam = adam or AdamConfig(learning_rate=eta1)
    N = len(dataset)
    if N < 2:
        raise ValueError("training needs at least 2 samples")
    Xn = surrogate.stats.normalize_inputs(dataset.inputs)
    Yn = surrogate.stats.normalize_outputs(dataset.outputs)
    model = surrogate.model

    if loss == "gradpie":
        index = build_knn(Xn, k)
        if not np.any(index.distances > 0):
            raise ValueError("degenerate dataset: all inputs coincide")
        nbrs = index.neighbors

    epoch_loss = float("nan")
    for _ in range(max(l_epochs, 0)):
        perm = rng.permutation(N)
        total = 0.0
        for start in range(0, N, batch_size):
            idx = perm[start:start + batch_size]
            if loss == "gradpie":
                nb = nbrs[idx]
                uniq, inv = np.unique(np.concatenate([idx, nb.ravel()]), return_inverse=True)
                B = len(idx)
                inv_self, inv_nb = inv[:B], inv[B:].reshape(nb.shape)

                def loss_fn(Yhat, nb=nb, idx=idx, uniq=uniq, inv_self=inv_self, inv_nb=inv_nb):
                    val, g_self, g_nb = gradpie_loss(Yn[idx], Yn[nb], Yhat[inv_self], Yhat[inv_nb])
                    dY = np.zeros_like(Yhat)
                    np.add.at(dY, inv_self, g_self)
                    np.add.at(dY, inv_nb.ravel(), g_nb.reshape(-1, Yhat.shape[1]))
                    return val, dY

                val, grads = model.forward_backward(Xn[uniq], loss_fn)
            else:
                fn = mae_loss if loss == "mae" else mse_loss
                val, grads = model.forward_backward(Xn[idx], lambda Yhat, idx=idx: fn(Yhat, Yn[idx]))
            model.adam_step(grads, adam)
            total += val * len(idx)
        epoch_loss = total / N
        if epoch_loss < epsilon:
            break
    return epoch_loss


def offline_train(dataset: Dataset, cfg: RunConfig, loss: str | None = None,
                  surrogate: Surrogate | None = None) -> tuple[Surrogate, float]:
    """Fit a fresh surrogate on a fixed dataset."""
    loss = loss or cfg.loss
    if surrogate is None:
        stats = (NormStats.from_arrays(dataset.inputs, dataset.outputs) if cfg.normalize
                 else NormStats.identity(dataset.input_dim, dataset.output_dim))
        surrogate = Surrogate.create(dataset.input_dim, dataset.output_dim, cfg.hidden,
                                     layernorm=cfg.layernorm, seed=cfg.seed, stats=stats)
    if loss == "gradpie" and len(dataset) < 2:
        raise ValueError("the pairwise loss needs at least 2 samples")
    rng = np.random.default_rng([cfg.seed, 1])
    final = train_surrogate(surrogate, dataset, loss=loss, k=cfg.k, l_epochs=cfg.l_epochs,
                            batch_size=cfg.batch_size, eta1=cfg.eta1, epsilon=cfg.epsilon, rng=rng)
    return surrogate, final


def _vector_adam_step(x, g, state: AdamState, config: AdamConfig):
    params = {"x": x.copy()}
    state.update(params, {"x": g}, config)
    return params["x"]


def offline_optimize(gradient_source, blackbox, objective: Objective, x0,
                     cfg: RunConfig) -> OptimizeResult:
    """Adam descent on ``x`` for ``cfg.tau`` iterations.

    Each iteration queries the black box once at the current ``x``; the
    objective's gradient at the true output is pulled back through
    ``gradient_source.vjp``.  Returns the best point seen under the true
    objective.
    """
    x = np.asarray(x0, dtype=float).copy()
    state = AdamState({"x": x.shape})
    adam = AdamConfig(learning_rate=cfg.eta2)
    best_x, best_val = x.copy(), None
    traj = []
    start = time.perf_counter()
    for t in range(1, cfg.tau + 1):
        y = blackbox(x)
        val = float(objective.evaluate(y))
        if best_val is None or objective.better(val, best_val):
            best_x, best_val = x.copy(), val
        traj.append(TrajectoryRecord(t, best_val, val, blackbox.queries, float("nan"), cfg.seed,
                                     time.perf_counter() - start, x.copy()[None, :]))
        g = gradient_source.vjp(x[None, :], objective.descent_gradient(y)[None, :])[0]
        if not np.all(np.isfinite(g)):
            return OptimizeResult(best_x, best_val, traj, error=f"non-finite gradient at iteration {t}")
        x = _vector_adam_step(x, g, state, adam)
    if best_val is None:
        return OptimizeResult(x, float("nan"), traj)
    return OptimizeResult(best_x, best_val, traj)


def online_optimize(blackbox, objective: Objective, cfg: RunConfig,
                    gradient: str = "surrogate", loss: str | None = None) -> OptimizeResult:
    """Online loop: local sampling, retraining, rank selection, one Adam step.

    The candidate pool starts as the ``n_init`` initial points; each
    iteration the ``n_best`` best candidates by true objective take one Adam
    step (each candidate keeps its own optimizer state) and are replaced by
    their re-evaluated successors.  Local samples join both the pool and the
    training set.  ``gradient="exact"`` swaps the surrogate for the black
    box's reference Jacobian.
    """
    loss = loss or cfg.loss
    rng = np.random.default_rng(cfg.seed)
    train_rng = np.random.default_rng([cfg.seed, 1])
    adam_x = AdamConfig(learning_rate=cfg.eta2)
    d_in = blackbox.input_dim

    X0 = rng.standard_normal((cfg.n_init, d_in))
    try:
        Y0 = blackbox(X0)
    except Exception as exc:  # noqa: BLE001 - any black-box failure aborts the run
        return OptimizeResult(X0[0], float("nan"), [], error=f"initial evaluation failed: {exc}")
    dataset = Dataset(X0, Y0)
    stats = (NormStats.from_arrays(X0, Y0) if cfg.normalize
             else NormStats.identity(d_in, dataset.output_dim))
    dataset.stats = stats

    surrogate = None
    if gradient == "surrogate":
        surrogate = Surrogate.create(d_in, dataset.output_dim, cfg.hidden,
                                     layernorm=cfg.layernorm, seed=cfg.seed, stats=stats)
        source = surrogate
    elif gradient == "exact":
        source = ExactGradient(blackbox)
    else:
        raise ValueError(f"gradient must be 'surrogate' or 'exact', got {gradient!r}")

    pool_x = list(X0)
    pool_y = list(Y0)
    pool_val = list(objective.evaluate(Y0))
    pool_state = [AdamState({"x": (d_in,)}) for _ in pool_x]
    b0 = rank_select(pool_val, 1, objective.direction)[0]
    best_x, best_val = pool_x[b0].copy(), float(pool_val[b0])
    center = best_x.copy()
    sampler = LocalSamplerConfig(cfg.n_s, cfg.sigma, cfg.seed)

    traj = []
    start = time.perf_counter()
    train_loss = float("nan")
    for t in range(1, cfg.tau + 1):
        try:
            if cfg.n_s > 0:
                Xs = local_sample(center, sampler, rng=rng, scale=stats.x_std)
                Ys = blackbox(Xs)
                dataset.append(Xs, Ys)
                vals = objective.evaluate(Ys)
                for x, y, v in zip(Xs, Ys, vals):
                    pool_x.append(x)
                    pool_y.append(y)
                    pool_val.append(float(v))
                    pool_state.append(AdamState({"x": (d_in,)}))
            if surrogate is not None:
                if not cfg.warm_start:
                    surrogate = Surrogate.create(d_in, dataset.output_dim, cfg.hidden,
                                                 layernorm=cfg.layernorm, seed=cfg.seed + t,
                                                 stats=stats)
                    source = surrogate
                train_loss = train_surrogate(surrogate, dataset, loss=loss, k=cfg.k,
                                             l_epochs=cfg.l_epochs, batch_size=cfg.batch_size,
                                             eta1=cfg.eta1, epsilon=cfg.epsilon, rng=train_rng)
            sel = rank_select(pool_val, cfg.n_best, objective.direction)
            Xsel = np.stack([pool_x[i] for i in sel])
            Ysel = np.stack([pool_y[i] for i in sel])
            G = source.vjp(Xsel, objective.descent_gradient(Ysel))
            if not np.all(np.isfinite(G)):
                raise FloatingPointError("non-finite input gradient")
            Xnew = np.stack([_vector_adam_step(pool_x[i], g, pool_state[i], adam_x)
                             for i, g in zip(sel, G)])
            Ynew = blackbox(Xnew)
        except Exception as exc:  # noqa: BLE001 - preserve trajectory on failure
            return OptimizeResult(best_x, best_val, traj, dataset, surrogate,
                                  error=f"iteration {t}: {exc}")
        dataset.append(Xnew, Ynew)
        vals = objective.evaluate(Ynew)
        for i, x, y, v in zip(sel, Xnew, Ynew, vals):
            pool_x[i], pool_y[i], pool_val[i] = x, y, float(v)
            if objective.better(float(v), best_val):
                best_x, best_val = x.copy(), float(v)
        b = rank_select(pool_val, 1, objective.direction)[0]
        center = pool_x[b]
        traj.append(TrajectoryRecord(t, best_val, float(np.mean(vals)), blackbox.queries,
                                     train_loss, cfg.seed, time.perf_counter() - start, Xnew))
    return OptimizeResult(best_x, best_val, traj, dataset, surrogate)


def random_search_baseline(blackbox, objective: Objective, cfg: RunConfig,
                           bounds=None) -> OptimizeResult:
    """Draw ``n_best`` samples per iteration and keep the best.

    Samples are standard normal, or uniform within ``bounds = (low, high)``.
    """
    rng = np.random.default_rng(cfg.seed)
    d = blackbox.input_dim
    best_x, best_val = None, None
    traj = []
    start = time.perf_counter()
    for t in range(1, cfg.tau + 1):
        if bounds is None:
            X = rng.standard_normal((cfg.n_best, d))
        else:
            X = rng.uniform(bounds[0], bounds[1], size=(cfg.n_best, d))
        vals = objective.evaluate(blackbox(X))
        i = rank_select(vals, 1, objective.direction)[0]
        if best_val is None or objective.better(float(vals[i]), best_val):
            best_x, best_val = X[i].copy(), float(vals[i])
        traj.append(TrajectoryRecord(t, best_val, float(np.mean(vals)), blackbox.queries,
                                     float("nan"), cfg.seed, time.perf_counter() - start, X))
    return OptimizeResult(best_x, best_val if best_val is not None else float("nan"), traj)
