"""Transverse-field Ising models: parameters, Hamiltonians, clamping and
thermal expectations.

Qubits are numbered visible first, then hidden. For supervised models the
visible block is further split into inputs followed by outputs.
"""

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import kernels
from .operators import check_size, spectral_decompose

ZERO_PROBABILITY = 1e-300


class UndefinedConditionalError(ArithmeticError):
    """The conditioning event has (numerically) zero probability."""


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def full_mask(n):
    return np.triu(np.ones((n, n), dtype=bool), 1)


def semi_restricted_mask(n_visible, n_hidden):
    mask = full_mask(n_visible + n_hidden)
    mask[n_visible:, n_visible:] = False
    return mask


@dataclass(frozen=True, eq=False)
class ModelParameters:
    """Biases ``b``, couplings ``w`` (strict upper triangle) and transverse
    fields ``gamma`` of a transverse-field Ising model.

    Use :meth:`create` rather than the constructor; it fills defaults and
    normalizes the coupling layout.
    """

    n_visible: int
    n_hidden: int
    b: np.ndarray
    w: np.ndarray
    gamma: np.ndarray
    mask: np.ndarray
    shared_gamma: bool = False
    restricted: bool = False

    def __post_init__(self):
        n = self.n
        for name, shape in (("b", (n,)), ("gamma", (n,)), ("w", (n, n)), ("mask", (n, n))):
            value = getattr(self, name)
            if value.shape != shape:
                raise ValueError(f"{name} has shape {value.shape}, expected {shape}")
        if np.any(np.tril(self.mask)):
            raise ValueError("mask must be strictly upper triangular")
        if np.any(self.w[~self.mask] != 0.0):
            raise ValueError("couplings outside the connectivity mask must be zero")
        if np.any(self.gamma < 0):
            raise ValueError("transverse fields must be non-negative")
        if self.shared_gamma and n and np.any(self.gamma != self.gamma[0]):
            raise ValueError("shared-gamma mode requires equal transverse fields")
        if self.restricted and np.any(self.mask[self.n_visible:, self.n_visible:]):
            raise ValueError("restricted models cannot couple hidden units")

    @classmethod
    def create(cls, n_visible, n_hidden=0, b=None, w=None, gamma=None, mask=None,
               topology="full", shared_gamma=False):
        n = n_visible + n_hidden
        if mask is None:
            if topology == "full":
                mask = full_mask(n)
            elif topology == "semi-restricted":
                mask = semi_restricted_mask(n_visible, n_hidden)
            else:
                raise ValueError(f"unknown topology {topology!r}")
        mask = np.triu(np.asarray(mask, dtype=bool), 1)
        b = np.zeros(n) if b is None else np.asarray(b, dtype=np.float64).reshape(n)
        w = np.zeros((n, n)) if w is None else np.triu(np.asarray(w, dtype=np.float64), 1)
        if gamma is None:
            gamma = np.zeros(n)
        gamma = np.broadcast_to(np.asarray(gamma, dtype=np.float64), (n,))
        restricted = topology == "semi-restricted"
        return cls(n_visible, n_hidden, _frozen(b), _frozen(w), _frozen(gamma),
                   _frozen(mask, bool), shared_gamma, restricted)

    @property
    def n(self):
        return self.n_visible + self.n_hidden

    @property
    def pairs(self):
        """Enabled (a, b) pairs with a < b, in row-major order."""
        return np.argwhere(self.mask)

    @property
    def is_classical(self):
        return not np.any(self.gamma)

    def evolve(self, **changes):
        """Copy with some fields replaced; arrays are re-validated."""
        for key in ("b", "gamma"):
            if key in changes:
                changes[key] = _frozen(np.broadcast_to(changes[key], (self.n,)))
        if "w" in changes:
            changes["w"] = _frozen(np.triu(changes["w"], 1))
        return replace(self, **changes)

    def coupling_matrix(self):
        """Symmetric (n, n) coupling matrix with zero diagonal."""
        return self.w + self.w.T


def spins(values):
    """Validate and return a +/-1 spin vector as an int array."""
    v = np.asarray(values)
    if v.ndim != 1:
        raise ValueError("spin vector must be one-dimensional")
    if not np.all((v == 1) | (v == -1)):
        raise ValueError("spin values must be +1 or -1")
    return v.astype(np.int64)


def index_to_spins(index, n):
    return np.array([1 - 2 * ((index >> (n - 1 - a)) & 1) for a in range(n)], dtype=np.int64)


def spins_to_index(v):
    out = 0
    for s in spins(v):
        out = (out << 1) | (1 if s == -1 else 0)
    return out


def build_hamiltonian(p):
    check_size(p.n)
    h = np.diag(kernels.ising_diagonal(p.b, p.w, p.n))
    return kernels.add_transverse(h, p.gamma, p.n)


class ClampedModel(NamedTuple):
    """Remaining qubits after clamping, plus the constant energy of the
    clamped spins (their own biases and mutual couplings)."""

    params: ModelParameters
    offset: float


def clamp_prefix(p, v):
    """Clamp the first ``len(v)`` qubits to classical spins ``v``.

    The clamped qubits lose their transverse field and fold into the
    remaining qubits' biases.
    """
    v = spins(v)
    k = len(v)
    if k > p.n_visible:
        raise ValueError(f"cannot clamp {k} spins of a model with {p.n_visible} visible units")
    wsym = p.coupling_matrix()
    b_eff = p.b[k:] + wsym[k:, :k] @ v
    offset = -float(p.b[:k] @ v) - float(v @ p.w[:k, :k] @ v)
    rest = ModelParameters(
        p.n_visible - k, p.n_hidden, _frozen(b_eff), _frozen(p.w[k:, k:]),
        _frozen(p.gamma[k:]), _frozen(p.mask[k:, k:], bool), p.shared_gamma,
        p.restricted and k == p.n_visible,
    )
    return ClampedModel(rest, offset)


def clamp_visible(p, v):
    if len(v) != p.n_visible:
        raise ValueError(f"expected {p.n_visible} visible spins, got {len(v)}")
    return clamp_prefix(p, v)


@dataclass(frozen=True)
class VisibleDistribution:
    """Probability table over the 2**n_vars states of some spin block, in
    basis order."""

    n_vars: int
    probabilities: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.shape != (1 << self.n_vars,):
            raise ValueError(f"expected {1 << self.n_vars} probabilities, got {p.shape}")
        if np.any(p < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > 1e-10:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probabilities", _frozen(p))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probabilities, dtype=dtype)

    @property
    def support(self):
        return np.flatnonzero(self.probabilities > 0)

    def marginal(self, n_leading):
        """Marginal over the first ``n_leading`` variables."""
        table = self.probabilities.reshape(1 << n_leading, -1)
        return VisibleDistribution(n_leading, table.sum(axis=1))


class MomentSet(NamedTuple):
    z: np.ndarray    # <Z_a>
    zz: np.ndarray   # <Z_a Z_b>, full symmetric matrix with unit diagonal
    x: np.ndarray    # <X_a>


class EnergyDecomposition(NamedTuple):
    classical: float
    quantum: float


class ThermalState:
    """Eigendecomposition-backed Gibbs state of one model.

    Energies are shifted by the ground-state energy before exponentiating;
    ``weights`` and ``partition`` are relative to that shift.
    """

    def __init__(self, p):
        check_size(p.n)
        self.params = p
        self._moments = None
        n = p.n
        if p.is_classical:
            energies = kernels.ising_diagonal(p.b, p.w, n)
            self.decomposition = None
            self.shift = float(energies.min())
            self.diag_weights = np.exp(-(energies - self.shift))
            self.partition = float(self.diag_weights.sum())
        else:
            self.decomposition = spectral_decompose(build_hamiltonian(p), check=False, overwrite=True)
            lam, vecs = self.decomposition
            self.shift = float(lam[0])
            self.weights = np.exp(-(lam - self.shift))
            self.partition = float(self.weights.sum())
            self.diag_weights = (vecs * vecs) @ self.weights
        self.diagonal = self.diag_weights / self.partition

    @property
    def log_partition(self):
        return float(np.log(self.partition) - self.shift)

    def visible_weights(self):
        """Unnormalized Tr[Lambda_v e^{-H}] (relative to the shift) per visible state."""
        return self.diag_weights.reshape(1 << self.params.n_visible, -1).sum(axis=1)

    def visible_marginals(self):
        table = self.visible_weights() / self.partition
        return VisibleDistribution(self.params.n_visible, table / table.sum())

    def moments(self):
        if self._moments is None:
            m = self._compute_moments()
            for arr in m:
                arr.setflags(write=False)
            self._moments = m
        return self._moments

    def _compute_moments(self):
        n = self.params.n
        z = kernels.spin_table(n)
        mz = z.T @ self.diagonal
        mzz = z.T @ (self.diagonal[:, None] * z)
        if self.decomposition is None:
            mx = np.zeros(n)
        else:
            vecs = self.decomposition.eigenvectors
            mx = kernels.flip_traces(vecs * self.weights, vecs, n) / self.partition
        return MomentSet(mz, mzz, mx)


def visible_marginals(p):
    return ThermalState(p).visible_marginals()


def gibbs_moments(p):
    return ThermalState(p).moments()


def energies_from_moments(p, m):
    e_cl = -float(p.b @ m.z) - float(np.sum(p.w * m.zz))
    e_q = -float(p.gamma @ m.x)
    return EnergyDecomposition(e_cl, e_q)


def energy_decomposition(p):
    return energies_from_moments(p, gibbs_moments(p))


def _conditional_from_joint(joint, n_inputs, n_outputs):
    table = joint.reshape(1 << n_inputs, 1 << n_outputs)
    px = table.sum(axis=1, keepdims=True)
    if np.any(px < ZERO_PROBABILITY):
        raise UndefinedConditionalError("input state has zero model probability")
    return table / px


def conditional_table(p, n_inputs, state=None):
    """P_{y|x} for every input x, shape (2**n_inputs, 2**n_outputs)."""
    n_outputs = p.n_visible - n_inputs
    if n_outputs < 0:
        raise ValueError("more inputs than visible units")
    state = ThermalState(p) if state is None else state
    joint = state.visible_weights() / state.partition
    return _conditional_from_joint(joint, n_inputs, n_outputs)


def conditional_distribution(p, x, state=None):
    """Exact P_{y|x} = Tr[L_x L_y e^{-H}] / Tr[L_x e^{-H}]; inputs are the
    first ``len(x)`` visible units, outputs the remaining ones."""
    x = spins(x)
    n_outputs = p.n_visible - len(x)
    if n_outputs < 0:
        raise ValueError("more inputs than visible units")
    state = ThermalState(p) if state is None else state
    table = state.visible_weights().reshape(1 << len(x), 1 << n_outputs)
    row = table[spins_to_index(x)]
    total = row.sum() / state.partition
    if total < ZERO_PROBABILITY:
        raise UndefinedConditionalError(f"P_x underflows for x={x.tolist()}")
    return VisibleDistribution(n_outputs, row / row.sum())


def clamped_conditional_distribution(p, x):
    """P^clamped_{y|x}: outputs of the Hamiltonian with inputs clamped to x."""
    rest = clamp_prefix(p, x).params
    return ThermalState(rest).visible_marginals()


# --- batched clamped models (one small Hamiltonian per clamped configuration)

def clamped_fields(p, v_block):
    """Effective biases and offsets for a batch of clamped prefixes.

    ``v_block`` is (m, k) spins for the first k qubits. Returns
    (b_eff (m, n - k), offsets (m,)).
    """
    v_block = np.asarray(v_block, dtype=np.float64)
    k = v_block.shape[1]
    wsym = p.coupling_matrix()
    b_eff = p.b[k:][None, :] + v_block @ wsym[:k, k:]
    offsets = -(v_block @ p.b[:k]) - np.einsum("ma,ab,mb->m", v_block, p.w[:k, :k], v_block)
    return b_eff, offsets


class BatchThermal:
    """Gibbs states of many small models sharing couplings and transverse
    fields and differing only in their biases."""

    def __init__(self, b_eff, w, gamma):
        b_eff = np.atleast_2d(np.asarray(b_eff, dtype=np.float64))
        m, n = b_eff.shape
        self.n = n
        check_size(n)
        z = kernels.spin_table(n)
        self.spin = z
        base_diag = kernels.ising_diagonal(np.zeros(n), w, n)
        diag = base_diag[None, :] - b_eff @ z.T
        if not np.any(gamma):
            self.vecs = None
            self.shift = diag.min(axis=1)
            self.diag_weights = np.exp(-(diag - self.shift[:, None]))
            self.partition = self.diag_weights.sum(axis=1)
        else:
            base = kernels.add_transverse(np.zeros((1 << n, 1 << n)), gamma, n)
            hs = np.broadcast_to(base, (m,) + base.shape).copy()
            idx = np.arange(1 << n)
            hs[:, idx, idx] = diag
            lam, vecs = np.linalg.eigh(hs)
            self.vecs = vecs
            self.shift = lam[:, 0]
            self.weights = np.exp(-(lam - self.shift[:, None]))
            self.partition = self.weights.sum(axis=1)
            self.diag_weights = np.einsum("msi,msi,mi->ms", vecs, vecs, self.weights)
        self.diagonal = self.diag_weights / self.partition[:, None]

    @property
    def log_partition(self):
        return np.log(self.partition) - self.shift

    def moments(self):
        z = self.spin
        mz = self.diagonal @ z
        mzz = np.einsum("ms,sa,sb->mab", self.diagonal, z, z)
        if self.vecs is None:
            mx = np.zeros_like(mz)
        else:
            idx = np.arange(1 << self.n)
            mx = np.empty_like(mz)
            scaled = self.vecs * self.weights[:, None, :]
            for q in range(self.n):
                flipped = self.vecs[:, idx ^ (1 << (self.n - 1 - q)), :]
                mx[:, q] = np.einsum("msi,msi->m", scaled, flipped) / self.partition
        return MomentSet(mz, mzz, mx)


def clamped_conditional_table(p, n_inputs):
    """P^clamped_{y|x} for every input x, shape (2**n_inputs, 2**n_outputs)."""
    n_outputs = p.n_visible - n_inputs
    xs = kernels.spin_table(n_inputs)
    b_eff, _ = clamped_fields(p, xs)
    batch = BatchThermal(b_eff, p.w[n_inputs:, n_inputs:], p.gamma[n_inputs:])
    table = batch.diag_weights.reshape(len(xs), 1 << n_outputs, -1).sum(axis=2)
    return table / table.sum(axis=1, keepdims=True)


# --- discriminative models: inputs are classical real numbers, not qubits

@dataclass(frozen=True, eq=False)
class DiscriminativeParameters:
    """Qubit model over outputs then hidden units, with real-valued inputs
    coupled to every qubit through ``w_in`` (n_qubits, n_inputs)."""

    qubits: ModelParameters
    w_in: np.ndarray

    def __post_init__(self):
        if self.w_in.ndim != 2 or self.w_in.shape[0] != self.qubits.n:
            raise ValueError(f"w_in must have {self.qubits.n} rows")

    @classmethod
    def create(cls, n_outputs, n_hidden, n_inputs, w_in=None, **kwargs):
        qubits = ModelParameters.create(n_outputs, n_hidden, **kwargs)
        w_in = np.zeros((qubits.n, n_inputs)) if w_in is None else np.asarray(w_in, dtype=np.float64)
        return cls(qubits, _frozen(w_in.reshape(qubits.n, n_inputs)))

    @property
    def n_outputs(self):
        return self.qubits.n_visible

    @property
    def n_inputs(self):
        return self.w_in.shape[1]


def discriminative_hamiltonian(p, x):
    """Qubit model whose biases absorb the input: b_a + sum_mu w_{a mu} x_mu."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.n_inputs,):
        raise ValueError(f"expected {p.n_inputs} inputs, got shape {x.shape}")
    return p.qubits.evolve(b=p.qubits.b + p.w_in @ x)
