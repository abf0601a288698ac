"""Physical constants (CODATA, 6 significant figures) and lattice defaults."""

import math

HBAR = 1.05457e-34  # J s
H = 2 * math.pi * HBAR  # J s
KB = 1.38065e-23  # J / K
CS_MASS = 2.20695e-25  # kg, cesium-133

LAMBDA_MAGIC = 866e-9  # m
NU_PAR = 117e3  # Hz
NU_PERP = 20e3  # Hz
GAMMA_SCATTER = 12.5  # 1/s
