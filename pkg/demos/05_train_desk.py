"""Train a desk-scale refiner on the synthetic corpus and compare methods.

A full run uses 60 epochs (about 10 minutes on one core). Pass a smaller
epoch count as the first argument for a quick look.
"""

import sys
import time

import torch

from patchrefine.pipeline.evaluation import attach_pseudo_labels, evaluate, format_table
from patchrefine.pipeline.presets import desk_synthetic_config, desk_train_config
from patchrefine.pipeline.synthetic import gen_synthetic_corpus
from patchrefine.pipeline.training import train

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 5
torch.set_num_threads(1)

splits = gen_synthetic_corpus(desk_synthetic_config())
print({role: len(s) for role, s in splits.items()})

# the refiner learns from the validation split; test stays untouched
cfg = desk_train_config(max_epochs=epochs)
attach_pseudo_labels(splits["val"], cfg.network.patch_size)

start = time.time()
checkpoint, history = train(
    cfg, splits["val"],
    on_epoch=lambda r: print("epoch %3d  lr %.1e  loss %.4f" % (r.epoch, r.lr, r.train_loss)),
)
print("trained %d epochs in %.0fs" % (len(history), time.time() - start))

reports = evaluate(
    checkpoint.build(), splits["test"], cfg.network.patch_size,
    threshold_samples=splits["val"], training_samples=splits["val"],
)
print(format_table(reports))
