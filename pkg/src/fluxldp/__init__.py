"""Empirical measure-flux large deviations for weakly interacting jump processes.

Submodules:

* ``model_core``      state space, measures, fluxes, jump kernels
* ``particle_sim``    exact n-particle simulation and the mean-field ODE
* ``rate_calculus``   relative entropy, Hamiltonian, Lagrangian, action, contracted rate
* ``hj_lab``          grid Hamilton-Jacobi laboratory
* ``ldp_experiments`` Monte Carlo checks of the large deviation and averaging behaviour
* ``cli``             configuration-driven entry point
"""

__version__ = "0.1.0"
