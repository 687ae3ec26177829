"""Exact training distributions: Bernoulli mixtures over spin vectors.

Randomness comes from numpy's Philox4x64 counter-based generator keyed by
``SeedSequence([seed, stream])``; stream 0 draws mode centers, other streams
are free for callers (parameter initialization uses stream 1).
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import VisibleDistribution, spins
from .operators import check_size

CENTER_STREAM = 0
INIT_STREAM = 1


def generator(seed, stream=0):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass(frozen=True)
class MixtureSpec:
    n: int
    modes: int = 8
    p: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.modes < 1:
            raise ValueError("need at least one mode")
        if not 0 < self.p < 1:
            raise ValueError("alignment probability must lie in (0, 1)")
        if self.n < 1:
            raise ValueError("need at least one variable")


def hamming_distance(u, v):
    u, v = spins(u), spins(v)
    if u.shape != v.shape:
        raise ValueError("spin vectors differ in length")
    return int(np.count_nonzero(u != v))


def mode_centers(spec):
    rng = generator(spec.seed, CENTER_STREAM)
    return 1 - 2 * rng.integers(0, 2, size=(spec.modes, spec.n), dtype=np.int64)


def mixture_table(centers, p):
    """(1/M) sum_k p^(n - d_k) (1 - p)^d_k for every state in basis order."""
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    n = centers.shape[1]
    z = kernels.spin_table(n)
    dist = (n - z @ centers.T) / 2  # Hamming distance to each center
    per_mode = p ** (n - dist) * (1 - p) ** dist
    return per_mode.mean(axis=1), per_mode


def bernoulli_mixture(spec):
    check_size(spec.n)
    centers = mode_centers(spec)
    table, _ = mixture_table(centers, spec.p)
    return VisibleDistribution(spec.n, table / table.sum()), centers


@dataclass(frozen=True)
class LabeledJointSpec:
    """Mixture over inputs, with mode k labelled by ``labels[k]`` written on
    ``label_width`` output spins (most significant bit on the first output;
    bit 1 -> +1, bit 0 -> -1)."""

    inputs: MixtureSpec
    label_width: int = 3
    labels: tuple = None

    def mode_labels(self):
        labels = tuple(range(self.inputs.modes)) if self.labels is None else tuple(self.labels)
        if len(labels) != self.inputs.modes:
            raise ValueError("need exactly one label per mode")
        if any(not 0 <= lab < (1 << self.label_width) for lab in labels):
            raise ValueError(f"labels do not fit in {self.label_width} bits")
        return labels


def label_spins(label, width):
    return np.array([1 if (label >> (width - 1 - i)) & 1 else -1 for i in range(width)])


def label_index(label, width):
    """Basis index of the label's spin encoding (spin +1 is bit 0)."""
    return (~label) & ((1 << width) - 1)


def labeled_mixture(spec):
    """Joint table over [x, y] with x from the mixture and y the mode label."""
    n_x, width = spec.inputs.n, spec.label_width
    check_size(n_x + width)
    labels = spec.mode_labels()
    centers = mode_centers(spec.inputs)
    _, per_mode = mixture_table(centers, spec.inputs.p)
    joint = np.zeros((1 << n_x, 1 << width))
    for k, lab in enumerate(labels):
        joint[:, label_index(lab, width)] += per_mode[:, k] / len(labels)
    joint = joint.ravel()
    return VisibleDistribution(n_x + width, joint / joint.sum())
