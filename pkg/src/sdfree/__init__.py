"""Small-divisor-free normal forms for Hamiltonians with one non-periodic coordinate.

The unperturbed part is ``H0 = omega_r r + omega_I.I + omega_J.pq``, with the
non-periodic pair ``(r, x)``.  Perturbations are Taylor-Fourier series with
quasi-polynomial coefficients in ``x``; the homological equation is solved by
an integral from ``x = 0``, so no small denominators appear.
"""
from .series import (FrequencyData, PhaseSpace, QuasiPoly, SeriesError, TermKey, TFSeries,
                     TruncationOrders, build_series, evaluate, multiply, partial_derivative,
                     poisson_bracket, project_average)
from .norms import DomainSpec, Widths, coefficient_norm, norm_params, weighted_norm
from .homological import (SmallDivisorError, XDegreeOverflow, apply_D_omega, eigenvalue,
                          integrate_kernel, solve_homological, solve_homological_fourier)
from .lie import DivergenceError, lie_powers, queue_apply, transform_hamiltonian
from .normalform import (AssumptionError, HalvingError, NormalizationConfig, calibrate_constant,
                         check_assumptions, iterative_step, normalize, schedule)
from .dynamics import (PhasePoint, Trajectory, clock_flow, compare_trajectories, compose_flows,
                       flow_generator, integrate, unperturbed_flow)
from .constants import load_constants

__version__ = "0.1.0"
