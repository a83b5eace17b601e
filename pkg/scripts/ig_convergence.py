"""Completeness residual of integrated gradients versus the number of path steps.

Pretrains (or loads) a multimodal checkpoint and reports max/mean
|sum_f IG_f(d) - (enc(x)_d - enc(0)_d)| over test samples, in float64.

    python3 scripts/ig_convergence.py --checkpoint runs/x/checkpoints/epoch_50 --data data/desk
"""
import argparse
import copy

import numpy as np

from mmcl.attribution import completeness_residual, integrated_gradients_batch
from mmcl.checkpoint import load_checkpoint
from mmcl.data import SyntheticConfig, generate_synthetic, load_dataset
from mmcl.evaluation import _tabular_inputs
from mmcl.train import TrainConfig, pretrain


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--steps", type=int, nargs="*", default=[16, 64, 256, 1024])
    p.add_argument("--epochs", type=int, default=10, help="pretraining epochs when no checkpoint is given")
    args = p.parse_args()

    ds = load_dataset(args.data) if args.data else generate_synthetic(SyntheticConfig(n_samples=2000))
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint, ds)
    else:
        ckpt = pretrain(ds, TrainConfig(epochs=args.epochs, warmup_epochs=max(1, args.epochs // 5))).checkpoint
    enc = copy.deepcopy(ckpt.model.encoder("tabular")).double()
    x = _tabular_inputs(ckpt, ds.split("test"))[:args.samples].astype(np.float64)
    print("steps  max|residual|  mean|residual|")
    for steps in args.steps:
        ig = integrated_gradients_batch(enc, x, steps=steps)
        res = np.abs(np.stack([completeness_residual(enc, x[i], ig[i]) for i in range(len(x))]))
        print(f"{steps:5d}  {res.max():.3e}      {res.mean():.3e}")


if __name__ == "__main__":
    main()
