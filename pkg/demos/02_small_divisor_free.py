"""
Solving the homological equation without small divisors
=======================================================

The Fourier route divides every coefficient by ``mu = lambda + i l omega_r``,
which vanishes on an exact resonance.  The integral route integrates the
exponential kernel in ``x`` from ``x = 0`` and never divides.  A resonant key
only raises the x-degree of the solution.
"""

import numpy as np

from sdfree.homological import SmallDivisorError, apply_D_omega, solve_homological, \
    solve_homological_fourier
from sdfree.instances import random_frequencies, random_zero_average
from sdfree.series import FrequencyData, PhaseSpace, TFSeries, evaluate, max_relative_difference

# %%
# Choose omega_I = -omega_r / 2: the key k = 2 with the x-harmonic l = 1 is exactly resonant.
sp = PhaseSpace(FrequencyData(1.0, (-0.5,), (0.1,)))
f = TFSeries.from_terms(sp, [dict(k=(2,), w=(0, 0, 1)), dict(c=0.3, k=(1,), h=(1,))])

try:
    solve_homological_fourier(f)
except SmallDivisorError as exc:
    print("Fourier route:", exc)

phi = solve_homological(f)
P = (0.1, (0.2,), 0.3, (0.4,), (0.1,), (0.2,))
print("integral route, D phi - f at a point:", abs(evaluate(apply_D_omega(phi), P) - evaluate(f, P)))

# %%
# Away from resonances both routes agree, up to the kernel of D_omega.
rng = np.random.default_rng(0)
sp = PhaseSpace(random_frequencies(rng))
f = random_zero_average(rng, sp, 6, x_periodic=True)
a, b = solve_homological_fourier(f), solve_homological(f)
print("residual of each route:", max_relative_difference(apply_D_omega(a), f),
      max_relative_difference(apply_D_omega(b), f))
