"""Reference implementations that share no code with the package.

Everything here is built from explicit Kronecker products, dense matrix
exponentials and itertools enumeration, so agreement with the library is
evidence rather than tautology.
"""

import itertools

import numpy as np
from scipy import linalg

SX = np.array([[0.0, 1.0], [1.0, 0.0]])
SZ = np.array([[1.0, 0.0], [0.0, -1.0]])
I2 = np.eye(2)


def single(op, a, n):
    """op on qubit a (0 = leftmost Kronecker factor) of n qubits."""
    out = np.array([[1.0]])
    for k in range(n):
        out = np.kron(out, op if k == a else I2)
    return out


def hamiltonian(b, w, gamma):
    """-sum G X - sum b Z - sum_{a<c} w Z Z from Kronecker products."""
    n = len(b)
    h = np.zeros((1 << n, 1 << n))
    for a in range(n):
        h -= gamma[a] * single(SX, a, n) + b[a] * single(SZ, a, n)
        for c in range(a + 1, n):
            h -= w[a][c] * single(SZ, a, n) @ single(SZ, c, n)
    return h


def states(n):
    """All spin vectors in basis order (+1 is bit 0, first spin most significant)."""
    return [np.array(s) for s in itertools.product((1, -1), repeat=n)]


def energy(b, w, s):
    n = len(s)
    e = -sum(b[a] * s[a] for a in range(n))
    e -= sum(w[a][c] * s[a] * s[c] for a in range(n) for c in range(a + 1, n))
    return e


def boltzmann(b, w):
    """Classical joint distribution over all spins by enumeration."""
    e = np.array([energy(b, w, s) for s in states(len(b))])
    p = np.exp(-(e - e.min()))
    return p / p.sum()


def quantum_diagonal(b, w, gamma):
    rho = linalg.expm(-hamiltonian(b, w, gamma))
    return np.diag(rho) / np.trace(rho)


def marginal(joint, n_visible, n):
    return joint.reshape(1 << n_visible, 1 << (n - n_visible)).sum(axis=1)


def nll(joint_diag, data, n_visible, n):
    pv = marginal(joint_diag, n_visible, n)
    d = np.asarray(data)
    s = d > 0
    return float(-np.sum(d[s] * np.log(pv[s])))


def classical_gradient(b, w, data, n_visible):
    """dL/db and dL/dw (upper triangle) as <.>_model - <.>_clamped."""
    n = len(b)
    joint = boltzmann(b, w)
    ss = np.array(states(n), dtype=float)
    pv = marginal(joint, n_visible, n)
    post = joint * np.repeat(np.asarray(data) / pv, 1 << (n - n_visible))
    gb = ss.T @ joint - ss.T @ post
    gw = np.triu(ss.T @ (joint[:, None] * ss) - ss.T @ (post[:, None] * ss), 1)
    return gb, gw


def classical_conditional(b, w, n_inputs, n_visible):
    """P(y|x) table from the enumerated visible marginal."""
    n = len(b)
    pv = marginal(boltzmann(b, w), n_visible, n)
    table = pv.reshape(1 << n_inputs, -1)
    return table / table.sum(axis=1, keepdims=True)


def trace_projected_exp(h, indices, values):
    """Tr[Lambda e^{-H}] with Lambda projecting qubits ``indices`` onto ``values``."""
    n = int(np.log2(h.shape[0]))
    lam = np.eye(1 << n)
    for a, v in zip(indices, values):
        lam = lam @ single((I2 + v * SZ) / 2, a, n)
    return float(np.trace(lam @ linalg.expm(-h)))


def central_difference(fun, x, eps=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = eps
        g.flat[i] = (fun(x + e) - fun(x - e)) / (2 * eps)
    return g
