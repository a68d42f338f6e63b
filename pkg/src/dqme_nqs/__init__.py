"""Fermionic open-system dynamics with a dense tensor oracle and an RBM/TDVP solver.

Submodules
----------
bath          exponential decomposition of hybridization correlations
space         configuration indexing of the extended state space
models        impurity Hamiltonians and fermionic operators
liouvillian   the linear generator, matrix-free or sparse
dense         exact propagation, steady states and equilibration
rbm           RBM ansatz (scikit-learn estimator) and a linear reference ansatz
tdvp          variational equations of motion and steady-state minimization
sampler       Metropolis estimation of the variational sums
observables   currents, occupations, spin correlation, entropy, integral errors
pipeline      configured end-to-end runs
cli           the ``dqme`` command
"""

from .bath import DissipatonSet, ReservoirSpec, decompose, decompose_all
from .dense import equilibrate, rk4_propagate, steady_state_dense
from .liouvillian import Epoch, Generator, ScaledGenerator, mode_weights
from .models import AndersonSpec, TwoImpuritySpec, system_operators
from .observables import Observer, RdtVector, integral_error
from .rbm import LinearAnsatz, RbmDensityTensor, RbmParams
from .space import SpaceIndex
from .tdvp import propagate_parameters, steady_minimize

__version__ = "0.1.0"

__all__ = [
    "AndersonSpec", "DissipatonSet", "Epoch", "Generator", "LinearAnsatz", "Observer",
    "RbmDensityTensor", "RbmParams", "RdtVector", "ReservoirSpec", "ScaledGenerator",
    "SpaceIndex", "TwoImpuritySpec", "decompose", "decompose_all", "equilibrate",
    "integral_error", "mode_weights", "propagate_parameters", "rk4_propagate",
    "steady_minimize", "steady_state_dense", "system_operators",
]
