"""Pure numpy implementations of the hot elementwise kernels.

Every function here has a twin with the same signature in the compiled
``_kernels`` extension. Results agree to rounding.
"""

import numpy as np


def spin_table(n):
    """(2**n, n) array of +/-1 spins; qubit 0 is the most significant bit."""
    idx = np.arange(1 << n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    bits = (idx[:, None] >> shifts[None, :]) & 1
    return (1 - 2 * bits).astype(np.float64)


def ising_diagonal(b, w, n):
    """Diagonal of -sum_a b_a Z_a - sum_{a<b} w_ab Z_a Z_b.

    ``w`` is an (n, n) matrix; only its strict upper triangle is read.
    """
    z = spin_table(n)
    wu = np.triu(np.asarray(w, dtype=np.float64), 1)
    return -(z @ np.asarray(b, dtype=np.float64)) - np.einsum("sa,ab,sb->s", z, wu, z)


def add_transverse(h, gamma, n):
    """In place: h[s, s ^ bit_a] -= gamma_a for every qubit a."""
    idx = np.arange(1 << n)
    for a in range(n):
        g = gamma[a]
        if g != 0.0:
            h[idx, idx ^ (1 << (n - 1 - a))] -= g
    return h


def loewner_exp(lam, rtol=1e-9):
    """Divided differences of f(x) = exp(-x) over the spectrum ``lam``.

    F[i, j] = (f(l_i) - f(l_j)) / (l_i - l_j), and -exp(-l_i) where the gap
    falls below ``rtol * max(1, |l_i|)``. Evaluated around the smaller
    eigenvalue so nothing overflows for wide spectra.
    """
    lam = np.asarray(lam, dtype=np.float64)
    lo = np.minimum.outer(lam, lam)
    gap = np.abs(np.subtract.outer(lam, lam))
    scale = np.maximum(1.0, np.abs(lam))[:, None]
    degenerate = gap < rtol * scale
    safe = np.where(degenerate, 1.0, gap)
    out = np.exp(-lo) * np.expm1(-safe) / safe
    return np.where(degenerate, -np.exp(-lo), out)


def flip_traces(a, b, n):
    """t[q] = sum_{s, j} a[s, j] * b[s ^ bit_q, j] for each qubit q."""
    idx = np.arange(1 << n)
    out = np.empty(n)
    for q in range(n):
        out[q] = np.einsum("sj,sj->", a, b[idx ^ (1 << (n - 1 - q))])
    return out
