"""Physical constants and 171Yb+ reference parameters (SI units).

All frequencies are angular (rad/s) unless a name ends in ``_hz``.
"""

import numpy as np
from scipy import constants as _c

TWO_PI = 2.0 * np.pi

HBAR = _c.hbar
MU_B = _c.physical_constants["Bohr magneton"][0]
MU_0 = _c.mu_0
EPSILON_0 = _c.epsilon_0
E_CHARGE = _c.e
AMU = _c.atomic_mass
COULOMB_K = 1.0 / (4.0 * np.pi * EPSILON_0)

# 171Yb+ ground-state hyperfine splitting |F=0,0> <-> |F=1,0>
YB171_HYPERFINE = TWO_PI * 12.642812118466e9
# first-order Zeeman coefficient of |F=1, m_F=+-1> (g_F = 1)
YB171_GYROMAGNETIC = MU_B / HBAR
YB171_MASS = 170.936323 * AMU

# field and drive defaults of the magnetometer proposal
B0_DEFAULT = 0.765e-3
OMEGA_MW_DEFAULT = TWO_PI * 25e3
T_S_DEFAULT = 20e-3
T_PI_DEFAULT = 6.3e-3
T_ADD_DEFAULT = 20e-3
DELTA_B_DEFAULT = 0.05e-6
