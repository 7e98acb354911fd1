"""
Training the decoder prior
==========================

Trains the desk-scale VAE (64-dim signals with 4 nonzeros, 8-dim latent,
two hidden layers of 32) and exports its decoder, the generator used by
every reconstruction demo.  Takes a few seconds on one core.
"""

from pathlib import Path

import numpy as np

from onebitgen import forward, lipschitz_bound, save_model
from onebitgen.experiment import reference_train_job
from onebitgen.train import export_decoder, save_vae, write_training_curve

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)

job = reference_train_job()
print("training on", job.data, "latent", job.latent, "hidden", job.hidden)
vae = job.run(log=lambda row: row["epoch"] % 10 == 0 and print(f"epoch {row['epoch']:3d}  loss {row['mean_loss']:.2f}"))

G = export_decoder(vae)
save_model(G, out / "decoder.json")
save_vae(vae, out / "decoder.vae.json")
write_training_curve(vae.history, out / "decoder.curve.csv")

# decoded samples should look like the training data: a few bumps, mostly near zero
z = np.random.default_rng(0).standard_normal(8)
sample = forward(G, z)
print("largest decoded entries:", np.round(np.sort(sample)[-6:], 3))
print("layer-product Lipschitz bound:", f"{lipschitz_bound(G):.3g}")
print("wrote", out / "decoder.json")
