"""
Recovering one signal from its signs
====================================

Takes a signal from the decoder's range, measures it with m one-bit
measurements, and compares latent-space recovery against the sparse
baselines BIHT and YP.  Run 02_train_decoder.py first.
"""

from pathlib import Path

import numpy as np

from onebitgen import GenOpts, NoiseConfig, RngStream, biht, derive_stream, forward, load_model, make_ensemble, quantize
from onebitgen import reconstruct_gen, yp_convex
from onebitgen.analysis import metric_report

G = load_model(Path(__file__).parent / "out" / "decoder.json")
root = RngStream(7)

# the true signal: a decoded latent code, rescaled to unit norm
x = forward(G, derive_stream(root, 0).generator.standard_normal(G.s))
x /= np.linalg.norm(x)

for m in (50, 200):
    ens = make_ensemble("unit_sphere_columns", m, G.n, derive_stream(root, 1))
    obs = quantize(ens, x, NoiseConfig(), derive_stream(root, 2))
    A = ens.normalized

    res = reconstruct_gen(G, A, obs.y, GenOpts(restarts=20, steps_per_restart=100, step_size=0.5), derive_stream(root, 3))
    estimates = {
        "gen": res.x_hat,
        "biht": biht(A, obs.y, K=4),
        # YP with the l1 budget matched to a unit vector with 4 nonzeros
        "yp": yp_convex(A, obs.y, 2.0),
    }
    print(f"m={m}")
    for name, x_hat in estimates.items():
        rep = metric_report(x, x_hat, A, obs.y)
        print(f"  {name:5s} nmse={rep.nmse:.3f}  mse={rep.mse:.3f}  sign mismatch={rep.hamming:.3f}  norm={np.linalg.norm(x_hat):.3f}")
