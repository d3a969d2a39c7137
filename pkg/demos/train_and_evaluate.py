"""
Train a small model and compare against bicubic
===============================================

A few thousand pairs and a handful of epochs are enough to see the loss
fall and the model beat plain bicubic on pages it never saw.
Takes a minute or two on one core.
"""

import logging

from docsr import dataset as ds, evaluate, srnet, synth, trainer

logging.basicConfig(level=logging.INFO, format="%(message)s")

train_pages = [synth.render_page(300, 300, dpi=dpi, seed=i) for i, dpi in enumerate((100, 120, 150))]
test_pages = [(f"english_{dpi}_{i}", synth.render_page(200, 200, dpi=dpi, seed=100 + i))
              for i, dpi in enumerate((100, 150))]

stats = ds.compute_norm_stats(train_pages)
data = ds.PatchDataset.from_pairs(ds.sample_corpus(train_pages, 8000, 0, stats), stats)

cfg = trainer.TrainConfig(epochs=5, learning_rate=1e-4, batch_size=32, activation="prelu")
model, log = trainer.train(None, data, cfg)
print("losses", [round(v, 3) for v in log.train_losses])
print("slopes", log.epochs[-1].slopes)

srnet.save_model(model, "/tmp/demo_model.dsr")
report = evaluate.evaluate_corpus(srnet.load_model("/tmp/demo_model.dsr"), test_pages)
print(evaluate.render_report(report, "text").decode())

# a whole page goes through in 10x10 tiles
name, page = test_pages[0]
restored = srnet.super_resolve_page(model, ds.degrade(page))
ds.save_image(restored, "/tmp/demo_restored.png")
