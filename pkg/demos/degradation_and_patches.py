"""
From a clean page to training pairs
===================================

Render a synthetic text page, blur it with a bicubic down/up round trip,
and cut aligned low-res / high-res patch pairs out of it.
"""

import numpy as np

from docsr import dataset as ds, evaluate, synth

page = synth.render_page(240, 320, dpi=120, seed=3)
print("page", page.shape, "mean gray", page.pixels.mean())

# halve then restore the size; this is both the degradation and the bicubic baseline
blurred = ds.degrade(page)
print("bicubic PSNR", round(evaluate.psnr(page, blurred), 2), "dB")

# the resize is a matrix product along each axis
R = ds.resize_matrix(8, 4)
print("rows of the 8->4 resize matrix sum to", R.sum(axis=1))

stats = ds.compute_norm_stats([page])
pairs = ds.sample_patch_pairs(page, count=500, rng_seed=0, stats=stats)
first = pairs[0]
print("lr", first.lr.shape, "hr", first.hr.shape, "source", first.source)

# the hr patch sits 3 pixels inside the lr window, matching the net's border loss
r, c = first.source[1:]
window = ds.normalize(ds.GrayImage(blurred.pixels[r - 3:r + 13, c - 3:c + 13]), stats)
print("lr window matches", np.array_equal(window, first.lr))

data = ds.PatchDataset.from_pairs(pairs, stats)
ds.write_dataset(data, "/tmp/demo_pairs.dsp")
print("round trip", len(ds.read_dataset("/tmp/demo_pairs.dsp")), "pairs")

# normalization is exactly invertible on 8-bit pixels
print("identity", ds.denormalize(ds.normalize(page, stats), stats) == page)
