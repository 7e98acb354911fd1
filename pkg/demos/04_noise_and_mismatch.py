"""
Sign flips, additive noise and matrix mismatch
==============================================

Small sweeps through the experiment runner: NMSE as the flip rate grows,
the benefit of telling the recovery the true flip probability, and the
effect of reconstructing with a perturbed matrix.  Uses 5 trials per cell
so it finishes quickly; the acceptance suite runs the full 20.
"""

from pathlib import Path

from onebitgen import load_model
from onebitgen.experiment import ExperimentConfig, SignalSource, run_sweep, summarize

G = load_model(Path(__file__).parent / "out" / "decoder.json")
gen = {"restarts": 10, "steps_per_restart": 100, "step_size": 0.5}

alphas = (1.0, 0.9, 0.8)
cfg = ExperimentConfig(
    signal=SignalSource(kind="in_range"),
    m_grid=(200,),
    alpha_grid=alphas,
    algorithms=("gen", "gen_noise_aware"),
    trials=5,
    gen=gen,
)
s = summarize(run_sweep(cfg, G))
print("flip probability   gen     gen_noise_aware")
for a in alphas:
    print(f"{1 - a:16.2f}  {s[('gen', 200, 0.0, a, 0.0)]:.4f}  {s[('gen_noise_aware', 200, 0.0, a, 0.0)]:.4f}")

# the signs are taken with the true matrix, recovery sees A + Delta
vds = (0.0, 0.001, 0.005)
cfg = ExperimentConfig(
    signal=SignalSource(kind="in_range"), m_grid=(200,), v_delta_grid=vds, algorithms=("gen", "biht", "yp"), trials=5, gen=gen
)
s = summarize(run_sweep(cfg, G))
print("\nv_delta   gen     biht    yp")
for v in vds:
    print(f"{v:7.3f}  " + "  ".join(f"{s[(a, 200, 0.0, 1.0, v)]:.4f}" for a in ("gen", "biht", "yp")))
