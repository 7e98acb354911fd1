"""
Mean width, Lipschitz bounds and sample complexity
==================================================

The quantities that drive the recovery guarantee: a Monte-Carlo Gaussian
mean width, the layer-product Lipschitz bound of a generator checked
against sampled pairs, and the measurement-count and covering-number
calculators.
"""

from pathlib import Path

import numpy as np

from onebitgen import RngStream, derive_stream, forward, load_model
from onebitgen.analysis import covering_number_bound, mean_width_mc, measurement_bound
from onebitgen.experiment import lipschitz_sampling_ratio, run_theory_check

root = RngStream(20240601)

# two antipodal points: the width is 2 E|g_1| = 2 sqrt(2/pi)
pair = np.vstack([np.eye(8)[:1], -np.eye(8)[:1]])
print("mean width of {e1, -e1}:", round(mean_width_mc(pair, 100_000, derive_stream(root, 0)), 4), "vs 1.5958")

# width of decoded points grows with the size of the latent ball they come from
G = load_model(Path(__file__).parent / "out" / "decoder.json")
for r in (0.5, 1.0, 2.0):
    Z = derive_stream(root, 1).generator.standard_normal((500, G.s))
    Z *= r / np.linalg.norm(Z, axis=1, keepdims=True)
    P = np.array([forward(G, z) for z in Z])
    print(f"latent radius {r}: mean width of 500 decoded points {mean_width_mc(P, 5000, derive_stream(root, 2)):.3f}")

# the product bound is loose but never violated
print("largest sampled ratio to the Lipschitz bound:", f"{lipschitz_sampling_ratio(G, 2000, derive_stream(root, 3)):.2e}")

# measurements needed for a depth-3, width-64 network with 8 latent dims, latent radius 3, eps 0.5
print("measurement bound:", measurement_bound(8, 3, 3, 1, 64, 0.5, 0.5))
print("covering number of the latent ball (r=1, t=1, s=3):", covering_number_bound(1.0, 1.0, 3))

print()
for row in run_theory_check():
    print(f"{row['quantity']:28s} {row['estimate']:.5g}  target {row['target']:.5g}  {'ok' if row['pass'] else 'FAIL'}")
