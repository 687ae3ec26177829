"""Losses and exact gradients for classical, quantum and bound-based
Boltzmann machines.

All expectations are computed from exact diagonalization. Gradients follow
the descent convention: the update is ``theta -= eta * grad``.
"""

from typing import NamedTuple, Optional

import numpy as np

from . import kernels
from .model import (
    ZERO_PROBABILITY,
    BatchThermal,
    MomentSet,
    ThermalState,
    UndefinedConditionalError,
    VisibleDistribution,
    clamped_fields,
    conditional_distribution,
    discriminative_hamiltonian,
    index_to_spins,
)
from .operators import DEGENERACY_RTOL


class ParameterGradient(NamedTuple):
    """dL/db, dL/dw (strict upper triangle, zero off-mask), dL/dGamma per
    qubit (``None`` when not requested) and dL/dw_in for discriminative
    models."""

    b: np.ndarray
    w: np.ndarray
    gamma: Optional[np.ndarray] = None
    w_in: Optional[np.ndarray] = None


def _data_table(data, n_vars):
    table = np.asarray(data, dtype=np.float64)
    if table.shape != (1 << n_vars,):
        raise ValueError(f"data covers {table.size} states, model has {1 << n_vars}")
    return table


def _log_probabilities(state, table):
    """log P_v on the data support; raises instead of producing -inf."""
    support = np.flatnonzero(table > 0)
    pv = state.visible_weights()[support] / state.partition
    if np.any(pv < ZERO_PROBABILITY):
        raise FloatingPointError("model probability underflows on the data support")
    return support, np.log(pv)


def entropy(data):
    d = np.asarray(data, dtype=np.float64)
    d = d[d > 0]
    return float(-np.sum(d * np.log(d)))


def kl_divergence(model, data):
    """sum_v P^data_v log(P^data_v / P_v)."""
    m = np.asarray(model, dtype=np.float64)
    d = np.asarray(data, dtype=np.float64)
    if m.shape != d.shape:
        raise ValueError("distributions cover different state spaces")
    support = d > 0
    if np.any(m[support] <= 0):
        raise ValueError("model has zero probability where the data does not")
    return max(0.0, float(np.sum(d[support] * np.log(d[support] / m[support]))))


# --- exact negative log-likelihood

def nll_exact(p, data, state=None):
    table = _data_table(data, p.n_visible)
    state = ThermalState(p) if state is None else state
    support, logp = _log_probabilities(state, table)
    return float(-np.sum(table[support] * logp))


def _mask_upper(p, full):
    return np.where(p.mask, full, 0.0)


def grad_exact(p, data, state=None):
    """Exact dL/dtheta including the transverse fields.

    The clamped term needs the derivative of e^{-H} itself, not just its
    trace; it is taken in the eigenbasis with the Loewner kernel of exp(-x)
    and contracted against the data-weighted projector sum_v c_v Lambda_v in
    a single pass.
    """
    table = _data_table(data, p.n_visible)
    state = ThermalState(p) if state is None else state
    n = p.n
    z = kernels.spin_table(n)
    vis = state.visible_weights()
    support = table > 0
    if np.any(vis[support] / state.partition < ZERO_PROBABILITY):
        raise FloatingPointError("model probability underflows on the data support")
    ratio = np.zeros_like(vis)
    ratio[support] = table[support] / vis[support]
    per_state = np.repeat(ratio, 1 << p.n_hidden)
    moments = state.moments()

    if state.decomposition is None:
        # commuting case: the clamped term is a plain posterior average
        post = per_state * state.diag_weights
        pos_z = z.T @ post
        pos_zz = z.T @ (post[:, None] * z)
        gb = moments.z - pos_z
        gw = _mask_upper(p, moments.zz - pos_zz)
        return ParameterGradient(gb, gw, np.zeros(n))

    lam, vecs = state.decomposition
    loewner = kernels.loewner_exp(lam - state.shift, DEGENERACY_RTOL)
    g = vecs.T @ (per_state[:, None] * vecs)
    a = vecs @ (loewner * g)
    m_diag = np.einsum("sj,sj->s", a, vecs)
    gb = z.T @ m_diag + moments.z
    gw = _mask_upper(p, z.T @ (m_diag[:, None] * z) + moments.zz)
    gg = kernels.flip_traces(a, vecs, n) + moments.x
    return ParameterGradient(gb, gw, gg)


# --- Golden-Thompson bound

def rqbm_hidden_expectation(gamma, b_eff, mode="quantum"):
    """<Z_i> of an isolated qubit with field ``gamma`` and bias ``b_eff``."""
    gamma = np.asarray(gamma, dtype=np.float64)
    b_eff = np.asarray(b_eff, dtype=np.float64)
    if np.any(gamma < 0):
        raise ValueError("transverse field must be non-negative")
    if mode == "classical":
        return np.tanh(b_eff)
    if mode != "quantum":
        raise ValueError(f"unknown mode {mode!r}")
    d = np.hypot(gamma, b_eff)
    safe = np.where(d == 0, 1.0, d)
    return np.where(d == 0, 0.0, b_eff / safe * np.tanh(d))


def _rqbm_transverse(gamma, b_eff):
    d = np.hypot(gamma, b_eff)
    safe = np.where(d == 0, 1.0, d)
    return np.where(d == 0, 0.0, gamma / safe * np.tanh(d))


def _log_2cosh(x):
    return np.logaddexp(x, -x)


class _Clamped(NamedTuple):
    weights: np.ndarray      # P^data for each clamped configuration
    log_traces: np.ndarray   # log Tr[e^{-H_v}]
    moments: MomentSet       # weighted clamped averages over all qubits


def _clamped_phase(p, data, hidden="exact"):
    """Clamped averages over the data support.

    ``hidden`` picks how the clamped hidden layer is solved: by batched
    diagonalization ('exact'), or in closed form for uncoupled hidden units
    ('quantum' or its classical limit 'classical').
    """
    table = _data_table(data, p.n_visible)
    support = np.flatnonzero(table > 0)
    weights = table[support]
    vs = kernels.spin_table(p.n_visible)[support]
    b_eff, offsets = clamped_fields(p, vs)
    gamma_h = p.gamma[p.n_visible:]
    nh = p.n_hidden
    if hidden == "exact":
        batch = BatchThermal(b_eff, p.w[p.n_visible:, p.n_visible:], gamma_h)
        log_tr = batch.log_partition
        hm = batch.moments()
        hz, hzz, hx = hm.z, hm.zz, hm.x
    else:
        if np.any(p.mask[p.n_visible:, p.n_visible:]):
            raise ValueError("closed-form hidden phase needs a semi-restricted mask")
        g = np.broadcast_to(gamma_h, b_eff.shape)
        hz = rqbm_hidden_expectation(g, b_eff, hidden)
        if hidden == "quantum":
            hx = _rqbm_transverse(g, b_eff)
            log_tr = _log_2cosh(np.hypot(g, b_eff)).sum(axis=1)
        else:
            hx = np.zeros_like(hz)
            log_tr = _log_2cosh(b_eff).sum(axis=1)
        hzz = hz[:, :, None] * hz[:, None, :]
        idx = np.arange(nh)
        hzz[:, idx, idx] = 1.0
    log_tr = log_tr - offsets

    n = p.n
    nv = p.n_visible
    mz = np.concatenate([vs, hz], axis=1)
    mzz = np.empty((len(vs), n, n))
    mzz[:, :nv, :nv] = vs[:, :, None] * vs[:, None, :]
    mzz[:, :nv, nv:] = vs[:, :, None] * hz[:, None, :]
    mzz[:, nv:, :nv] = np.transpose(mzz[:, :nv, nv:], (0, 2, 1))
    mzz[:, nv:, nv:] = hzz
    mx = np.concatenate([np.zeros_like(vs), hx], axis=1)
    avg = MomentSet(weights @ mz, np.tensordot(weights, mzz, axes=1), weights @ mx)
    return _Clamped(weights, log_tr, avg)


def nll_bound(p, data, state=None, hidden="exact"):
    """Upper bound -sum_v P^data_v log(Tr[e^{-H_v}] / Tr[e^{-H}])."""
    state = ThermalState(p) if state is None else state
    clamped = _clamped_phase(p, data, hidden)
    return float(-np.sum(clamped.weights * (clamped.log_traces - state.log_partition)))


def _bound_gradient(p, pos, neg, with_gamma):
    gb = neg.z - pos.z
    gw = _mask_upper(p, neg.zz - pos.zz)
    gg = neg.x - pos.x if with_gamma else None
    return ParameterGradient(gb, gw, gg)


def grad_bound(p, data, with_gamma=False, state=None):
    """Gradient of :func:`nll_bound`: unclamped minus clamped averages.

    ``with_gamma`` adds the transverse-field component. For visible qubits
    its clamped part vanishes, so it is just <X_v> and always pushes the
    field towards zero.
    """
    state = ThermalState(p) if state is None else state
    pos = _clamped_phase(p, data, "exact").moments
    return _bound_gradient(p, pos, state.moments(), with_gamma)


def grad_bound_semirestricted(p, data, mode="quantum", with_gamma=False, state=None):
    """Bound gradient with the clamped hidden layer solved in closed form.

    ``mode='classical'`` substitutes tanh(b_eff) for the hidden
    expectations while the unclamped phase stays quantum.
    """
    if np.any(p.mask[p.n_visible:, p.n_visible:]):
        raise ValueError("model is not semi-restricted: hidden units are coupled")
    state = ThermalState(p) if state is None else state
    pos = _clamped_phase(p, data, mode).moments
    return _bound_gradient(p, pos, state.moments(), with_gamma)


# --- supervised learning

def generative_supervised_loss(p, joint, state=None):
    """Joint NLL with v = [x, y]."""
    return nll_exact(p, joint, state)


class LabeledData(NamedTuple):
    """Weighted (x, y) pairs: real inputs, output states as basis indices."""

    xs: np.ndarray
    ys: np.ndarray
    weights: np.ndarray

    @classmethod
    def from_joint(cls, joint, n_inputs):
        table = np.asarray(joint, dtype=np.float64)
        n_outputs = int(np.log2(table.size)) - n_inputs
        support = np.flatnonzero(table > 0)
        xs = kernels.spin_table(n_inputs)[support >> n_outputs]
        ys = support & ((1 << n_outputs) - 1)
        return cls(xs, ys, table[support])


def _unique_inputs(data):
    xs, inverse = np.unique(np.asarray(data.xs, dtype=np.float64), axis=0, return_inverse=True)
    return xs, inverse.reshape(-1)


class _Discriminative(NamedTuple):
    loss: float
    grad: ParameterGradient


def _discriminative_bound(p, data, with_grad, with_gamma=False):
    q = p.qubits
    no, n = q.n_visible, q.n
    xs, inv = _unique_inputs(data)
    b_x = q.b[None, :] + xs @ p.w_in.T
    free = BatchThermal(b_x, q.w, q.gamma)
    ys = kernels.spin_table(no)[data.ys].astype(np.float64)
    rows_b = b_x[inv]
    wsym = q.coupling_matrix()
    b_h = rows_b[:, no:] + ys @ wsym[:no, no:]
    offsets = -np.sum(rows_b[:, :no] * ys, axis=1) - np.einsum("ma,ab,mb->m", ys, q.w[:no, :no], ys)
    clamped = BatchThermal(b_h, q.w[no:, no:], q.gamma[no:])
    wts = np.asarray(data.weights, dtype=np.float64)
    log_ratio = clamped.log_partition - offsets - free.log_partition[inv]
    loss = float(-np.sum(wts * log_ratio))
    if not with_grad:
        return _Discriminative(loss, None)

    fm = free.moments()
    cm = clamped.moments()
    pz = np.concatenate([ys, cm.z], axis=1)
    pzz = np.empty((len(ys), n, n))
    pzz[:, :no, :no] = ys[:, :, None] * ys[:, None, :]
    pzz[:, :no, no:] = ys[:, :, None] * cm.z[:, None, :]
    pzz[:, no:, :no] = np.transpose(pzz[:, :no, no:], (0, 2, 1))
    pzz[:, no:, no:] = cm.zz
    px = np.concatenate([np.zeros_like(ys), cm.x], axis=1)
    dz = fm.z[inv] - pz
    gb = wts @ dz
    gw = _mask_upper(q, np.tensordot(wts, fm.zz[inv] - pzz, axes=1))
    gg = wts @ (fm.x[inv] - px) if with_gamma else None
    gin = (wts[:, None] * dz).T @ np.asarray(data.xs, dtype=np.float64)
    return _Discriminative(loss, ParameterGradient(gb, gw, gg, gin))


def discriminative_loss_bound(p, data):
    """-sum P^data_{x,y} log(Tr[e^{-H_{x,y}}] / Tr[e^{-H_x}])."""
    return _discriminative_bound(p, data, False).loss


def discriminative_grad_bound(p, data, with_gamma=False):
    return _discriminative_bound(p, data, True, with_gamma).grad


def discriminative_conditionals(p, data):
    """Exact P_{y|x} for each row of ``data``."""
    q = p.qubits
    xs, inv = _unique_inputs(data)
    free = BatchThermal(q.b[None, :] + xs @ p.w_in.T, q.w, q.gamma)
    table = free.diag_weights.reshape(len(xs), 1 << q.n_visible, -1).sum(axis=2)
    table = table / free.partition[:, None]
    out = table[inv, data.ys]
    if np.any(out < ZERO_PROBABILITY):
        raise UndefinedConditionalError("conditional probability underflows")
    return out


def discriminative_nll_exact(p, data):
    """-sum P^data_{x,y} log P_{y|x} with exact quantum conditionals."""
    return float(-np.sum(data.weights * np.log(discriminative_conditionals(p, data))))


def discriminative_grad_exact(p, data):
    """Exact gradient of :func:`discriminative_nll_exact` (all parameters).

    Each distinct input is an ordinary generative problem over the output
    qubits with the conditional data as target; input couplings follow by
    the chain rule through the effective biases.
    """
    q = p.qubits
    no = q.n_visible
    xs, inv = _unique_inputs(data)
    gb = np.zeros(q.n)
    gw = np.zeros((q.n, q.n))
    gg = np.zeros(q.n)
    gin = np.zeros_like(p.w_in)
    wts = np.asarray(data.weights, dtype=np.float64)
    for k, x in enumerate(xs):
        rows = inv == k
        px = wts[rows].sum()
        cond = np.zeros(1 << no)
        np.add.at(cond, np.asarray(data.ys)[rows], wts[rows] / px)
        g = grad_exact(discriminative_hamiltonian(p, x), cond)
        gb += px * g.b
        gw += px * g.w
        gg += px * g.gamma
        gin += px * np.outer(g.b, x)
    return ParameterGradient(gb, gw, gg, gin)


def predict_label(p, x):
    """argmax_y P_{y|x} as an output spin vector; ties go to the lowest index."""
    if hasattr(p, "w_in"):
        probs = ThermalState(discriminative_hamiltonian(p, x)).visible_marginals().probabilities
        n_out = p.n_outputs
    else:
        probs = conditional_distribution(p, x).probabilities
        n_out = p.n_visible - len(x)
    return index_to_spins(int(np.argmax(probs)), n_out)
