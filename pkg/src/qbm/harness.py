"""Experiment runner: config in, per-machine traces and summaries out."""

import csv
import json
import logging
import multiprocessing
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np
import yaml

from .charts import render_chart
from .data import INIT_STREAM, LabeledJointSpec, MixtureSpec, bernoulli_mixture, generator, labeled_mixture
from .model import (
    DiscriminativeParameters,
    ModelParameters,
    ThermalState,
    clamped_conditional_table,
    conditional_table,
)
from .optim import (
    OptimizerConfig,
    TraceRow,
    TrainingTrace,
    build_objective,
    minimize_bfgs,
    minimize_gradient_descent,
)
from .training import LabeledData, kl_divergence

log = logging.getLogger(__name__)

EXPERIMENTS = ("fully-visible", "semi-restricted", "supervised-generative", "supervised-discriminative")
MACHINES = ("BM", "QBM", "bQBM", "bQBM-CE")
TRACE_COLUMNS = TraceRow._fields
SUPERVISED_COLUMNS = ("iter", "joint_kl", "conditional_kl", "clamped_conditional_kl")
THREADS_ENV = "QBM_THREADS"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    machines: tuple = ("BM", "QBM", "bQBM")
    n_visible: int = 10
    n_hidden: int = 0
    n_outputs: int = 0
    modes: int = 8
    p: float = 0.9
    seed: int = 0
    optimizer: str = "bfgs"
    eta: float = 0.05
    max_iters: int = 500
    bm_max_iters: int | None = None
    grad_tol: float = 1e-5
    gamma_fixed: float = 2.0
    gamma_init: float = 0.1
    gamma_mode: str = "shared"
    init_scale: float = 0.1
    record_wall_time: bool = False
    charts: bool = True
    out_dir: str = "runs"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if not self.machines:
            raise ConfigError("machine list is empty")
        for m in self.machines:
            if m not in MACHINES:
                raise ConfigError(f"unknown machine {m!r}")
        if "bQBM-CE" in self.machines and self.experiment != "semi-restricted":
            raise ConfigError("bQBM-CE requires the semi-restricted topology")
        if self.experiment == "fully-visible" and self.n_hidden:
            raise ConfigError("fully-visible experiments have no hidden units")
        if self.experiment.startswith("supervised") and not 0 < self.n_outputs < self.n_visible:
            raise ConfigError("supervised experiments need 0 < n_outputs < n_visible")
        if self.gamma_mode not in ("shared", "each"):
            raise ConfigError("gamma_mode must be 'shared' or 'each'")

    @classmethod
    def from_mapping(cls, values):
        known = {f.name: f for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values = dict(values)
        if isinstance(values.get("machines"), str):
            values["machines"] = [m.strip() for m in values["machines"].split(",") if m.strip()]
        for key, value in values.items():
            if isinstance(value, (dict, list)) and key != "machines":
                raise ConfigError(f"config must be flat; {key!r} is nested")
        if "machines" in values:
            values["machines"] = tuple(values["machines"])
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            values = yaml.safe_load(fh) or {}
        if not isinstance(values, dict):
            raise ConfigError("config file must be a flat key: value mapping")
        return cls.from_mapping(values)

    @property
    def n_inputs(self):
        return self.n_visible - self.n_outputs

    def optimizer_config(self, machine):
        base = dict(method=self.optimizer, eta=self.eta, max_iters=self.max_iters, grad_tol=self.grad_tol,
                    record_wall_time=self.record_wall_time)
        if machine == "BM":
            # the classical baseline is cheap enough to run past the shared cap
            if self.bm_max_iters is not None:
                base["max_iters"] = self.bm_max_iters
            return OptimizerConfig(**base, gamma_fixed=0.0)
        if machine == "QBM":
            return OptimizerConfig(**base, train_gamma=self.gamma_mode, gamma_fixed=self.gamma_init)
        return OptimizerConfig(**base, gamma_fixed=self.gamma_fixed)

    def loss(self, machine):
        if self.experiment == "supervised-discriminative":
            return "discriminative-exact" if machine == "QBM" else "discriminative-bound"
        if machine in ("BM", "QBM"):
            return "exact"
        if machine == "bQBM-CE":
            return "bound-classical"
        return "bound-quantum" if self.experiment == "semi-restricted" else "bound"


# --- trace files

def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def emit_trace(trace, destination):
    """Write the trace as CSV with the fixed column contract."""
    if not len(trace):
        raise ValueError("refusing to write an empty trace")
    with open(destination, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in trace.rows:
            writer.writerow([_fmt(v) for v in row])
    return Path(destination)


def read_trace(source):
    trace = TrainingTrace(status="loaded")
    with open(source, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {header}")
        for rec in reader:
            trace.append(TraceRow(int(rec[0]), *(float(v) for v in rec[1:])))
    return trace


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


# --- experiment wiring

def initial_parameters(config):
    """Seeded U[-s, s] biases and couplings shared by every machine."""
    rng = generator(config.seed, INIT_STREAM)
    s = config.init_scale
    if config.experiment == "supervised-discriminative":
        n_q = config.n_outputs + config.n_hidden
        b = rng.uniform(-s, s, n_q)
        w = np.triu(rng.uniform(-s, s, (n_q, n_q)), 1)
        w_in = rng.uniform(-s, s, (n_q, config.n_inputs))
        return DiscriminativeParameters.create(config.n_outputs, config.n_hidden, config.n_inputs,
                                               w_in=w_in, b=b, w=w)
    n = config.n_visible + config.n_hidden
    topology = "semi-restricted" if config.experiment == "semi-restricted" else "full"
    b = rng.uniform(-s, s, n)
    w = np.triu(rng.uniform(-s, s, (n, n)), 1)
    if topology == "semi-restricted":
        w[config.n_visible:, config.n_visible:] = 0.0
    return ModelParameters.create(config.n_visible, config.n_hidden, b=b, w=w, topology=topology)


def training_data(config):
    if config.experiment.startswith("supervised"):
        spec = LabeledJointSpec(MixtureSpec(config.n_inputs, config.modes, config.p, config.seed),
                                label_width=config.n_outputs)
        return labeled_mixture(spec)
    dist, _ = bernoulli_mixture(MixtureSpec(config.n_visible, config.modes, config.p, config.seed))
    return dist


class SupervisedMonitor:
    """Per-iteration joint, conditional and clamped-conditional KL."""

    def __init__(self, objective_data, n_inputs, n_outputs):
        self.joint = np.asarray(objective_data, dtype=np.float64)
        self.n_inputs = n_inputs
        table = self.joint.reshape(1 << n_inputs, 1 << n_outputs)
        px = table.sum(axis=1, keepdims=True)
        self.cond_data = np.divide(table, px, out=np.zeros_like(table), where=px > 0)
        self.rows = []

    def conditional_kl(self, model_cond):
        table = self.joint.reshape(self.cond_data.shape)
        mask = table > 0
        return max(0.0, float(np.sum(table[mask] * np.log(self.cond_data[mask] / model_cond[mask]))))

    def measure(self, p, state=None):
        state = ThermalState(p) if state is None else state
        joint_kl = kl_divergence(state.visible_marginals(), self.joint)
        cond = conditional_table(p, self.n_inputs, state)
        clamped = clamped_conditional_table(p, self.n_inputs)
        return joint_kl, self.conditional_kl(cond), self.conditional_kl(clamped)

    def __call__(self, row, theta, objective):
        self.rows.append((row.iter,) + self.measure(objective.unpack(theta), objective.thermal_state(theta)))


class RunResult(NamedTuple):
    machine: str
    summary: dict
    errored: bool


def _summary(machine, trace, extra=None):
    last = trace.rows[-1] if trace.rows else None
    out = {
        "machine": machine,
        "final_kl": last.kl if last else None,
        "final_gamma": last.gamma if last else None,
        "final_e_cl": last.e_cl if last else None,
        "final_e_q": last.e_q if last else None,
        "iterations": last.iter if last else 0,
        "status": trace.status,
        "events": [list(e) for e in trace.events],
    }
    out.update(extra or {})
    return out


def run_machine(config, machine):
    """Train one machine and write its artifacts. Never raises for
    numerical failures; the summary records them."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace = TrainingTrace()
    extra = {}
    errored = False
    try:
        data = training_data(config)
        p0 = initial_parameters(config)
        loss = config.loss(machine)
        if config.experiment == "supervised-discriminative":
            data = LabeledData.from_joint(data, config.n_inputs)
        monitor = None
        callback = None
        if config.experiment == "supervised-generative":
            monitor = SupervisedMonitor(data, config.n_inputs, config.n_outputs)
        opt = config.optimizer_config(machine)
        objective, p0 = build_objective(p0, data, opt, loss)
        if monitor is not None:
            def callback(row, theta):
                monitor(row, theta, objective)
        run = minimize_bfgs if opt.method == "bfgs" else minimize_gradient_descent
        t0 = time.perf_counter()
        theta, trace = run(objective, objective.pack(p0), opt, callback)
        log.info("%s: %s after %d iterations (%.1fs)", machine, trace.status,
                 trace.rows[-1].iter, time.perf_counter() - t0)
        if monitor is not None:
            _write_rows(out / f"{machine}.supervised.csv", SUPERVISED_COLUMNS, monitor.rows)
            _, joint_kl, cond_kl, clamped_kl = monitor.rows[-1]
            extra = {"final_joint_kl": joint_kl, "final_conditional_kl": cond_kl,
                     "final_clamped_conditional_kl": clamped_kl}
        errored = trace.status == "diverged"
    except Exception as exc:  # recorded in the summary, reported via exit status
        log.exception("%s failed", machine)
        trace.status = f"error: {type(exc).__name__}: {exc}"
        errored = True
    if len(trace):
        emit_trace(trace, out / f"{machine}.csv")
    summary = _summary(machine, trace, extra)
    with open(out / f"{machine}.summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return RunResult(machine, summary, errored)


def _worker_count():
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}")


def run_experiment(config, workers=None):
    """Train every configured machine; returns a list of :class:`RunResult`.

    Machines are independent, so with ``workers > 1`` (or ``QBM_THREADS``)
    they train in separate processes, each pinned to one BLAS thread.
    """
    workers = _worker_count() if workers is None else workers
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump(asdict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if workers > 1 and len(config.machines) > 1:
        pinned = {k: "1" for k in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")}
        saved = {k: os.environ.get(k) for k in pinned}
        os.environ.update(pinned)
        try:
            ctx = multiprocessing.get_context("spawn")
            with ProcessPoolExecutor(min(workers, len(config.machines)), mp_context=ctx) as pool:
                results = list(pool.map(run_machine, [config] * len(config.machines), config.machines))
        finally:
            for k, v in saved.items():
                if v is None:
                    os.environ.pop(k, None)
                else:
                    os.environ[k] = v
    else:
        results = [run_machine(config, m) for m in config.machines]
    with open(out / "summary.json", "w") as fh:
        json.dump([r.summary for r in results], fh, indent=2, sort_keys=True)
        fh.write("\n")
    if config.charts:
        traces = {r.machine: out / f"{r.machine}.csv" for r in results if (out / f"{r.machine}.csv").exists()}
        if traces:
            loaded = {m: read_trace(path) for m, path in traces.items()}
            render_chart(loaded, "kl", out / "kl.svg")
            render_chart(loaded, "energy", out / "energy.svg")
    return results


# --- annealer schedule mapping

@dataclass(frozen=True)
class AnnealerSchedulePoint:
    beta: float
    a_star: float
    b_star: float
    h: tuple = ()
    j: tuple = field(default=())

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.a_star < 0 or self.b_star < 0:
            raise ValueError("schedule energies must be non-negative")


def annealer_parameter_map(pt):
    """Dimensionless model parameters at the freeze-out point:
    Gamma = beta A, b = beta B h, w = beta B J.

    ``j`` lists couplings for pairs a < b in row-major order; empty means
    uncoupled.
    """
    h = np.asarray(pt.h, dtype=np.float64)
    n = h.size
    j = np.asarray(pt.j, dtype=np.float64)
    iu = np.triu_indices(n, 1)
    if j.size not in (0, len(iu[0])):
        raise ValueError(f"expected {len(iu[0])} couplings for {n} qubits, got {j.size}")
    w = np.zeros((n, n))
    if j.size:
        w[iu] = pt.beta * pt.b_star * j
    return ModelParameters.create(n, 0, b=pt.beta * pt.b_star * h, w=w,
                                  gamma=np.full(n, pt.beta * pt.a_star), shared_gamma=True)
