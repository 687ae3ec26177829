"""Exact-diagonalization quantum Boltzmann machines.

Transverse-field Ising models small enough to diagonalize densely, trained
on exact data distributions with exact or Golden-Thompson-bounded
likelihoods.
"""

from .data import LabeledJointSpec, MixtureSpec, bernoulli_mixture, hamming_distance, labeled_mixture
from .kernels import BACKEND as KERNEL_BACKEND
from .model import (
    DiscriminativeParameters,
    ModelParameters,
    ThermalState,
    VisibleDistribution,
    build_hamiltonian,
    clamp_visible,
    clamped_conditional_distribution,
    conditional_distribution,
    discriminative_hamiltonian,
    energy_decomposition,
    gibbs_moments,
    visible_marginals,
)
from .operators import (
    frechet_gibbs_trace,
    gibbs_operator,
    pauli_operator,
    spectral_decompose,
    visible_projector,
)
from .optim import OptimizerConfig, TrainingTrace, bfgs_minimize, finite_difference_gradient, gradient_descent, train
from .training import (
    LabeledData,
    discriminative_grad_bound,
    discriminative_loss_bound,
    generative_supervised_loss,
    grad_bound,
    grad_bound_semirestricted,
    grad_exact,
    kl_divergence,
    nll_bound,
    nll_exact,
    predict_label,
    rqbm_hidden_expectation,
)

__version__ = "0.1.0"
