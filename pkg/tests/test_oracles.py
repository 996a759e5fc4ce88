import math

import numpy as np
from scipy import integrate, special

from oracles import LAMBDA_CLASSICAL_OU


def test_frozen_stationary_mean():
    t, w = np.polynomial.hermite.hermgauss(80)
    gh = float(np.sum(w / (1 + t**2)) / math.sqrt(math.pi))
    assert gh == LAMBDA_CLASSICAL_OU
    closed = math.sqrt(math.pi) * math.e * special.erfc(1.0)
    assert abs(closed - LAMBDA_CLASSICAL_OU) < 1e-9
    dens = lambda x: math.exp(-x * x) / math.sqrt(math.pi)
    quad, _ = integrate.quad(lambda x: dens(x) / (1 + x * x), -np.inf, np.inf)
    assert abs(quad - LAMBDA_CLASSICAL_OU) < 1e-9
