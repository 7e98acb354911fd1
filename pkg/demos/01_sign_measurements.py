"""
One-bit measurements and the sign correlation
=============================================

Draws a Gaussian sensing matrix, takes one-bit measurements of a unit
signal, and checks that the empirical correlation statistic lands on
sqrt(2/pi), shrunk by (2 alpha - 1) once signs are flipped at random.
"""

import numpy as np

from onebitgen import NoiseConfig, RngStream, derive_stream, make_ensemble, quantize
from onebitgen.analysis import f_statistic, sign_correlation_constant

root = RngStream(20240601)
m, n = 50_000, 32

# a unit-norm signal and a matrix with N(0, 1/m) entries
x = derive_stream(root, 0).generator.standard_normal(n)
x /= np.linalg.norm(x)
ens = make_ensemble("gaussian_iid", m, n, derive_stream(root, 1))

# the algorithms work with the rescaled matrix sqrt(m) * A, whose rows are standard normal
A = ens.normalized

for alpha in (1.0, 0.95, 0.9, 0.85):
    obs = quantize(ens, x, NoiseConfig(additive_variance=0.0, alpha=alpha), derive_stream(root, 2))
    f = f_statistic(A, obs.y, x)
    print(f"alpha={alpha:.2f}  f={f:.4f}  expected={sign_correlation_constant(alpha):.4f}")

# sign(0) is -1 by convention, so an all-zero signal gives all -1 measurements
zero = quantize(ens, np.zeros(n), NoiseConfig(), derive_stream(root, 3))
print("measurements of the zero signal:", np.unique(zero.y))
