"""Flat-vector objectives and the two optimizers used for training.

An :class:`Objective` packs a parameter record into a vector
``[b, w over enabled pairs, gamma (0, 1 or n entries), w_in]`` and exposes the
selected loss and its gradient on that vector.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .model import BatchThermal, DiscriminativeParameters, ThermalState, energies_from_moments
from .training import (
    discriminative_conditionals,
    discriminative_grad_bound,
    discriminative_grad_exact,
    discriminative_loss_bound,
    discriminative_nll_exact,
    grad_bound,
    grad_bound_semirestricted,
    grad_exact,
    kl_divergence,
    nll_bound,
    nll_exact,
)

log = logging.getLogger(__name__)

LOSSES = (
    "exact", "bound", "bound-quantum", "bound-classical",
    "discriminative-exact", "discriminative-bound",
)
GAMMA_MODES = ("fixed", "shared", "each")


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "bfgs"
    eta: float = 0.05
    max_iters: int = 500
    grad_tol: float = 1e-5
    armijo: float = 1e-4
    contraction: float = 0.5
    max_backtracks: int = 40
    curvature_eps: float = 1e-10
    divergence_window: int = 50
    train_gamma: str = "fixed"
    gamma_fixed: float = None
    record_wall_time: bool = False

    def __post_init__(self):
        if self.method not in ("gradient-descent", "bfgs"):
            raise ValueError(f"unknown optimizer {self.method!r}")
        if self.eta <= 0 or self.grad_tol <= 0 or self.max_iters < 0:
            raise ValueError("eta and grad_tol must be positive, max_iters non-negative")
        if not 0 < self.contraction < 1 or not 0 < self.armijo < 1:
            raise ValueError("line-search constants must lie in (0, 1)")
        if self.train_gamma not in GAMMA_MODES:
            raise ValueError(f"train_gamma must be one of {GAMMA_MODES}")


class TraceRow(NamedTuple):
    iter: int
    loss: float
    kl: float
    e_cl: float
    e_q: float
    gamma: float
    grad_norm: float
    wall_ms: float


@dataclass
class TrainingTrace:
    rows: list = field(default_factory=list)
    status: str = "running"
    events: list = field(default_factory=list)

    def append(self, row):
        if self.rows and row.iter <= self.rows[-1].iter:
            raise ValueError("trace iterations must be strictly increasing")
        self.rows.append(row)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def __len__(self):
        return len(self.rows)


def _qubits(params):
    return params.qubits if isinstance(params, DiscriminativeParameters) else params


class Objective:
    """Loss selected by name, evaluated on flat parameter vectors.

    The most recent evaluations are cached, so a line search followed by a
    gradient request at the accepted point costs one diagonalization.
    """

    def __init__(self, template, data, loss="exact", gamma_mode="fixed"):
        if loss not in LOSSES:
            raise ValueError(f"unknown loss {loss!r}")
        if gamma_mode not in GAMMA_MODES:
            raise ValueError(f"unknown gamma mode {gamma_mode!r}")
        discriminative = loss.startswith("discriminative")
        if discriminative != isinstance(template, DiscriminativeParameters):
            raise TypeError(f"loss {loss!r} does not match parameter type {type(template).__name__}")
        self.template = template
        self.loss = loss
        self.gamma_mode = gamma_mode
        self.data = data if discriminative else np.asarray(data, dtype=np.float64)
        q = _qubits(template)
        self._n = q.n
        self._pairs = q.mask.copy()
        self._n_pairs = int(self._pairs.sum())
        self._n_gamma = {"fixed": 0, "shared": 1, "each": q.n}[gamma_mode]
        self._w_in_shape = template.w_in.shape if discriminative else None
        self._cache = {}
        self.evaluations = 0

    @property
    def size(self):
        extra = int(np.prod(self._w_in_shape)) if self._w_in_shape else 0
        return self._n + self._n_pairs + self._n_gamma + extra

    def pack(self, params):
        q = _qubits(params)
        parts = [q.b, q.w[self._pairs]]
        if self.gamma_mode == "shared":
            parts.append(q.gamma[:1])
        elif self.gamma_mode == "each":
            parts.append(q.gamma)
        if self._w_in_shape:
            parts.append(params.w_in.ravel())
        return np.concatenate(parts).astype(np.float64)

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        n, k = self._n, self._n_pairs
        q = _qubits(self.template)
        w = np.zeros((n, n))
        w[self._pairs] = theta[n:n + k]
        changes = {"b": theta[:n], "w": w}
        pos = n + k
        if self.gamma_mode == "shared":
            changes["gamma"] = np.full(n, theta[pos])
            changes["shared_gamma"] = True
        elif self.gamma_mode == "each":
            changes["gamma"] = theta[pos:pos + n]
        pos += self._n_gamma
        q = q.evolve(**changes)
        if self._w_in_shape:
            w_in = theta[pos:].reshape(self._w_in_shape).copy()
            w_in.setflags(write=False)
            return DiscriminativeParameters(q, w_in)
        return q

    def lower_bounds(self):
        lb = np.full(self.size, -np.inf)
        start = self._n + self._n_pairs
        lb[start:start + self._n_gamma] = 0.0
        return lb

    def pack_gradient(self, g):
        parts = [g.b, g.w[self._pairs]]
        if self.gamma_mode == "shared":
            parts.append([np.sum(g.gamma)])
        elif self.gamma_mode == "each":
            parts.append(g.gamma)
        if self._w_in_shape:
            parts.append(g.w_in.ravel())
        return np.concatenate(parts).astype(np.float64)

    # --- evaluation

    def _entry(self, theta):
        key = np.asarray(theta, dtype=np.float64).tobytes()
        entry = self._cache.get(key)
        if entry is None:
            params = self.unpack(theta)
            state = None if self._w_in_shape else ThermalState(params)
            entry = {"params": params, "state": state}
            if len(self._cache) >= 4:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = entry
            self.evaluations += 1
        return entry

    def thermal_state(self, theta):
        """Cached Gibbs state at ``theta`` (``None`` for discriminative losses)."""
        return self._entry(theta)["state"]

    def value(self, theta):
        entry = self._entry(theta)
        if "loss" not in entry:
            p, state, data = entry["params"], entry["state"], self.data
            if self.loss == "exact":
                entry["loss"] = nll_exact(p, data, state)
            elif self.loss == "bound":
                entry["loss"] = nll_bound(p, data, state)
            elif self.loss == "bound-quantum":
                entry["loss"] = nll_bound(p, data, state, hidden="quantum")
            elif self.loss == "bound-classical":
                entry["loss"] = nll_bound(p, data, state, hidden="classical")
            elif self.loss == "discriminative-bound":
                entry["loss"] = discriminative_loss_bound(p, data)
            else:
                entry["loss"] = discriminative_nll_exact(p, data)
        return entry["loss"]

    def gradient(self, theta):
        entry = self._entry(theta)
        if "grad" not in entry:
            p, state, data = entry["params"], entry["state"], self.data
            with_gamma = self.gamma_mode != "fixed"
            if self.loss == "exact":
                g = grad_exact(p, data, state)
            elif self.loss == "bound":
                g = grad_bound(p, data, with_gamma, state)
            elif self.loss in ("bound-quantum", "bound-classical"):
                g = grad_bound_semirestricted(p, data, self.loss.split("-")[1], with_gamma, state)
            elif self.loss == "discriminative-bound":
                g = discriminative_grad_bound(p, data, with_gamma)
            else:
                g = discriminative_grad_exact(p, data)
            entry["grad"] = self.pack_gradient(g)
        return entry["grad"]

    def value_and_grad(self, theta):
        return self.value(theta), self.gradient(theta)

    __call__ = value

    def metrics(self, theta):
        """Exact KL to the data, classical/quantum energies and mean field."""
        entry = self._entry(theta)
        p = entry["params"]
        q = _qubits(p)
        if self._w_in_shape is None:
            state = entry["state"]
            kl = kl_divergence(state.visible_marginals(), self.data)
            e_cl, e_q = energies_from_moments(p, state.moments())
        else:
            data = self.data
            cond = discriminative_conditionals(p, data)
            kl = max(0.0, float(np.sum(data.weights * np.log(_data_conditionals(data) / cond))))
            e_cl, e_q = _discriminative_energies(p, data)
        return {"kl": kl, "e_cl": e_cl, "e_q": e_q, "gamma": float(np.mean(q.gamma)) if q.n else 0.0}


def _data_conditionals(data):
    xs, inv = np.unique(np.asarray(data.xs, dtype=np.float64), axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    px = np.bincount(inv, weights=data.weights)
    return data.weights / px[inv]


def _discriminative_energies(p, data):
    q = p.qubits
    xs, inv = np.unique(np.asarray(data.xs, dtype=np.float64), axis=0, return_inverse=True)
    px = np.bincount(inv.reshape(-1), weights=data.weights)
    b_x = q.b[None, :] + xs @ p.w_in.T
    m = BatchThermal(b_x, q.w, q.gamma).moments()
    e_cl = -np.sum(b_x * m.z, axis=1) - np.einsum("ab,mab->m", q.w, m.zz)
    e_q = -(m.x @ q.gamma)
    return float(px @ e_cl), float(px @ e_q)


def finite_difference_gradient(fun, theta, eps=1e-5):
    """Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2 eps."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    out = np.empty_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        down = theta.copy()
        up[i] += eps
        down[i] -= eps
        out[i] = (fun(up) - fun(down)) / (2 * eps)
    return out


def projected_gradient_norm(theta, grad, lower):
    pg = np.where((theta <= lower) & (grad > 0), 0.0, grad)
    return float(np.max(np.abs(pg), initial=0.0))


class _Recorder:
    def __init__(self, objective, config, trace, callback):
        self.objective = objective
        self.config = config
        self.trace = trace
        self.callback = callback
        self.start = time.perf_counter()

    def __call__(self, it, theta, loss, grad_norm):
        m = self.objective.metrics(theta)
        wall = (time.perf_counter() - self.start) * 1e3 if self.config.record_wall_time else 0.0
        row = TraceRow(it, float(loss), m["kl"], m["e_cl"], m["e_q"], m["gamma"], grad_norm, wall)
        self.trace.append(row)
        if self.callback is not None:
            self.callback(row, theta)
        log.debug("iter %d loss %.6f kl %.6f gamma %.4f |g| %.2e", it, loss, m["kl"], m["gamma"], grad_norm)


def _safe_value(objective, theta):
    try:
        value = objective.value(theta)
    except (FloatingPointError, ArithmeticError):
        return np.inf
    return value if np.isfinite(value) else np.inf


def minimize_gradient_descent(objective, theta0, config, callback=None):
    """Plain descent theta <- max(lower, theta - eta * grad)."""
    lower = objective.lower_bounds()
    theta = np.maximum(np.asarray(theta0, dtype=np.float64), lower)
    trace = TrainingTrace()
    record = _Recorder(objective, config, trace, callback)
    loss, grad = objective.value_and_grad(theta)
    gnorm = projected_gradient_norm(theta, grad, lower)
    record(0, theta, loss, gnorm)
    rises = 0
    trace.status = "max_iters"
    for it in range(1, config.max_iters + 1):
        if gnorm < config.grad_tol:
            trace.status = "converged"
            break
        theta = np.maximum(theta - config.eta * grad, lower)
        new_loss = _safe_value(objective, theta)
        if not np.isfinite(new_loss):
            trace.status = "diverged"
            break
        rises = rises + 1 if new_loss > loss else 0
        loss = new_loss
        grad = objective.gradient(theta)
        gnorm = projected_gradient_norm(theta, grad, lower)
        record(it, theta, loss, gnorm)
        if rises >= config.divergence_window:
            trace.status = "diverged"
            break
    else:
        if gnorm < config.grad_tol:
            trace.status = "converged"
    return theta, trace


def _backtrack(objective, theta, loss, grad, direction, lower, config):
    alpha = 1.0
    for _ in range(config.max_backtracks):
        trial = np.maximum(theta + alpha * direction, lower)
        step = trial - theta
        if not np.any(step):
            return None
        value = _safe_value(objective, trial)
        if value <= loss + config.armijo * float(grad @ step):
            return trial, value
        alpha *= config.contraction
    return None


def minimize_bfgs(objective, theta0, config, callback=None):
    """BFGS on the inverse Hessian with Armijo backtracking.

    Bounded coordinates (transverse fields) are projected onto their lower
    bound; a direction that pushes a bound coordinate outward is zeroed there.
    """
    lower = objective.lower_bounds()
    theta = np.maximum(np.asarray(theta0, dtype=np.float64), lower)
    size = theta.size
    hinv = np.eye(size)
    trace = TrainingTrace()
    record = _Recorder(objective, config, trace, callback)
    loss, grad = objective.value_and_grad(theta)
    gnorm = projected_gradient_norm(theta, grad, lower)
    record(0, theta, loss, gnorm)
    trace.status = "max_iters"
    for it in range(1, config.max_iters + 1):
        if gnorm < config.grad_tol:
            trace.status = "converged"
            break
        at_bound = theta <= lower
        direction = -hinv @ grad
        direction[at_bound & (direction < 0)] = 0.0
        if grad @ direction >= 0:
            hinv = np.eye(size)
            direction = -grad
            direction[at_bound & (direction < 0)] = 0.0
        step = _backtrack(objective, theta, loss, grad, direction, lower, config)
        if step is None:
            trace.events.append((it, "steepest-descent-fallback"))
            hinv = np.eye(size)
            direction = -grad
            direction[at_bound & (direction < 0)] = 0.0
            step = _backtrack(objective, theta, loss, grad, direction, lower, config)
            if step is None:
                trace.status = "line_search_failed"
                break
        new_theta, new_loss = step
        new_grad = objective.gradient(new_theta)
        s = new_theta - theta
        y = new_grad - grad
        sy = float(s @ y)
        if sy > config.curvature_eps:
            rho = 1.0 / sy
            hy = hinv @ y
            hinv = (hinv - rho * (np.outer(s, hy) + np.outer(hy, s))
                    + (rho * rho * float(y @ hy) + rho) * np.outer(s, s))
        theta, loss, grad = new_theta, new_loss, new_grad
        gnorm = projected_gradient_norm(theta, grad, lower)
        record(it, theta, loss, gnorm)
    else:
        if gnorm < config.grad_tol:
            trace.status = "converged"
    return theta, trace


def build_objective(p0, data, config, loss):
    """Objective for ``loss`` with the config's gamma handling applied to ``p0``."""
    if config.gamma_fixed is not None:
        q = _qubits(p0).evolve(gamma=np.full(_qubits(p0).n, float(config.gamma_fixed)))
        p0 = DiscriminativeParameters(q, p0.w_in) if isinstance(p0, DiscriminativeParameters) else q
    return Objective(p0, data, loss, config.train_gamma), p0


def gradient_descent(p0, data, config, loss="exact", callback=None):
    objective, p0 = build_objective(p0, data, config, loss)
    theta, trace = minimize_gradient_descent(objective, objective.pack(p0), config, callback)
    return objective.unpack(theta), trace


def bfgs_minimize(p0, data, config, loss="exact", callback=None):
    objective, p0 = build_objective(p0, data, config, loss)
    theta, trace = minimize_bfgs(objective, objective.pack(p0), config, callback)
    return objective.unpack(theta), trace


def train(p0, data, config, loss="exact", callback=None):
    run = bfgs_minimize if config.method == "bfgs" else gradient_descent
    return run(p0, data, config, loss, callback)
