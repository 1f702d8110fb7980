"""Digit completion with a scale-rotation equivariant model.

Trains a deliberately tiny RxSO(2) model on upright, full-size digits and
then asks it to fill in a digit that has been shrunk and rotated. Pictures
are written as PGM strips: context | truth | predicted mean.

    python demos/image_completion.py [outdir]
"""
import sys
from pathlib import Path

import numpy as np

from equivcnp.autodiff import no_grad
from equivcnp.data import render_digit, sample_image_task, transform_image, write_pgm
from equivcnp.model import ImageEquivCNP, image_log_likelihood
from equivcnp.plotting import tile_images
from equivcnp.train import train_image

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo-2d")
out.mkdir(exist_ok=True)

model = ImageEquivCNP(tag="RxSO2", enc_channels=8, enc_fraction=1 / 40, enc_n_mc=16,
                      channels=8, n_blocks=1, block_fraction=1 / 40, block_n_mc=16, seed=0)
train_image(model, epochs=15, batch_size=4, seed=0, batches_per_epoch=10,
            on_epoch=lambda r: print(f"epoch {r.epoch}: train ll {r.mean_ll:+.3f}"))

rng = np.random.default_rng(0)
for label, scale, angle in ((3, 1.0, 0.0), (3, 0.4, 40.0), (7, 0.3, -70.0)):
    img = transform_image(render_digit(label), scale, np.deg2rad(angle))
    mask, _ = sample_image_task(img, rng, fraction=0.3)
    with no_grad():
        pred = model(img.pixels[None, None], mask[None], rng=rng)
    ll = image_log_likelihood(pred, img.pixels[None, None])[0]
    mean = np.clip(pred.mu.data[0, :, 0].reshape(img.pixels.shape), 0, 1)
    strip = tile_images([np.where(mask > 0, img.pixels, 0.5), img.pixels, mean])
    name = f"digit{label}_s{scale}_a{angle:+.0f}.pgm"
    write_pgm(out / name, strip)
    print(f"{name}: ll {ll:+.3f}")
