"""Dense real-symmetric operators on n-qubit spaces.

Basis convention: index ``s`` encodes qubit ``a`` (0-based) in bit
``n - 1 - a`` of ``s``, bit value 0 meaning spin +1. Index 0 is therefore the
all-up state and qubit 0 is the most significant bit, so the diagonal of a
classical Hamiltonian lists energies in lexicographic order.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import linalg

from . import kernels

MAX_QUBITS = 14
DEGENERACY_RTOL = 1e-9


class SizeGuardError(ValueError):
    """Raised when an operator would exceed the configured qubit ceiling."""


class EigensolverError(RuntimeError):
    pass


def check_size(n, limit=None):
    limit = MAX_QUBITS if limit is None else limit
    if n < 0:
        raise ValueError(f"qubit count must be non-negative, got {n}")
    if n > limit:
        raise SizeGuardError(f"{n} qubits exceeds the size guard of {limit}")


def qubit_count(dim):
    n = int(dim).bit_length() - 1
    if dim < 1 or (1 << n) != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


def check_symmetric(op, rtol=1e-12):
    op = np.asarray(op, dtype=np.float64)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {op.shape}")
    qubit_count(op.shape[0])
    scale = max(1.0, float(np.max(np.abs(op)))) if op.size else 1.0
    if np.max(np.abs(op - op.T), initial=0.0) > rtol * scale:
        raise ValueError("operator is not symmetric")
    return op


def pauli_operator(kind, qubit, n, limit=None):
    """Single-qubit Pauli ``kind`` ('X' or 'Z') on ``qubit`` of an n-qubit space."""
    check_size(n, limit)
    if not 0 <= qubit < n:
        raise IndexError(f"qubit {qubit} out of range for {n} qubits")
    kind = kind.upper()
    dim = 1 << n
    if kind == "Z":
        return np.diag(kernels.spin_table(n)[:, qubit])
    if kind == "X":
        op = np.zeros((dim, dim))
        gamma = np.zeros(n)
        gamma[qubit] = -1.0
        return kernels.add_transverse(op, gamma, n)
    raise ValueError(f"unknown Pauli kind {kind!r}")


class SpectralDecomposition(NamedTuple):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def spectral_decompose(op, check=True, overwrite=False):
    """Ascending eigenvalues and orthonormal eigenvectors of a symmetric matrix.

    ``overwrite=True`` lets the eigensolver reuse ``op`` as workspace.
    """
    if check:
        op = check_symmetric(op)
    if np.count_nonzero(op) == np.count_nonzero(np.diagonal(op)):
        # diagonal input: exact, and avoids an O(d^3) solve for classical models
        d = np.diagonal(op).copy()
        order = np.argsort(d, kind="stable")
        vecs = np.zeros_like(op)
        vecs[order, np.arange(len(d))] = 1.0
        return SpectralDecomposition(d[order], vecs)
    try:
        lam, vecs = linalg.eigh(op, driver="evd", overwrite_a=overwrite, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise EigensolverError(str(exc)) from exc
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(vecs))):
        raise EigensolverError("eigensolver returned non-finite values")
    return SpectralDecomposition(lam, vecs)


class GibbsOperator(NamedTuple):
    """e^{-H} stored as ``matrix * exp(-shift)``, with ``partition`` likewise.

    ``shift`` is the smallest eigenvalue of H, so ``matrix`` has entries of
    order one no matter how large the energies are.
    """

    matrix: np.ndarray
    partition: float
    shift: float

    @property
    def log_partition(self):
        return float(np.log(self.partition) - self.shift)

    def density(self):
        return self.matrix / self.partition


def gibbs_operator(h, decomposition=None):
    if decomposition is None:
        decomposition = spectral_decompose(h)
    lam, vecs = decomposition
    shift = float(lam[0])
    weights = np.exp(-(lam - shift))
    matrix = (vecs * weights) @ vecs.T
    return GibbsOperator(matrix, float(weights.sum()), shift)


@dataclass(frozen=True)
class Projector:
    """Diagonal projector fixing ``indices`` to spin ``values`` (+/-1)."""

    indices: tuple
    values: tuple
    n: int

    def __post_init__(self):
        if len(self.indices) != len(self.values):
            raise ValueError("indices and values differ in length")
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("clamped indices must be distinct")
        for a in self.indices:
            if not 0 <= a < self.n:
                raise IndexError(f"qubit {a} out of range for {self.n} qubits")
        for v in self.values:
            if v not in (-1, 1):
                raise ValueError(f"spin values must be +1 or -1, got {v}")

    @property
    def dimension(self):
        return 1 << self.n

    def diagonal(self):
        z = kernels.spin_table(self.n)
        keep = np.ones(self.dimension, dtype=bool)
        for a, v in zip(self.indices, self.values):
            keep &= z[:, a] == v
        return keep.astype(np.float64)

    def matrix(self):
        return np.diag(self.diagonal())


def visible_projector(indices, values, n, limit=None):
    check_size(n, limit)
    return Projector(tuple(int(a) for a in indices), tuple(int(v) for v in values), n)


def frechet_gibbs_trace(h, direction, projector, decomposition=None):
    """Tr[P dexp(-H)[E]]: directional derivative of Tr[P e^{-H}] along H -> H + tE.

    Evaluated in the eigenbasis of H with the divided-difference kernel of
    exp(-x), which integrates the imaginary-time expression exactly.
    ``projector`` may be a :class:`Projector`, a diagonal vector, or a matrix.
    """
    h = check_symmetric(h)
    e = check_symmetric(direction)
    if e.shape != h.shape:
        raise ValueError("dimension mismatch between H and direction")
    if isinstance(projector, Projector):
        proj = projector.matrix()
    else:
        proj = np.asarray(projector, dtype=np.float64)
        if proj.ndim == 1:
            proj = np.diag(proj)
    if proj.shape != h.shape:
        raise ValueError("dimension mismatch between H and projector")
    if decomposition is None:
        decomposition = spectral_decompose(h, check=False)
    lam, vecs = decomposition
    shift = lam[0]
    kernel = kernels.loewner_exp(lam - shift, DEGENERACY_RTOL)
    e_tilde = vecs.T @ e @ vecs
    p_tilde = vecs.T @ proj @ vecs
    return float(np.sum(e_tilde * kernel * p_tilde) * np.exp(-shift))
