"""Pre-train on toy trajectories, then regress pK on the predicted space shift.

Prints the fit for the pre-trained model and for an untrained one of the same
configuration, once per model seed.
"""
import argparse
import math
import time

import numpy as np

from mdpretrain.analysis import space_shift_analysis
from mdpretrain.model import MDModel, ModelConfig
from mdpretrain.pretrain import PretrainConfig, pretrain
from mdpretrain.synthmd import ToyComplexSpec, generate_trajectory


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", default="1234,0,1", help="comma-separated model seeds")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--train-trajectories", type=int, default=8)
    p.add_argument("--complexes", type=int, default=50)
    p.add_argument("--temperature", type=float, default=0.3)
    p.add_argument("--interval", type=int, default=10)
    args = p.parse_args()

    ks = np.geomspace(0.5, 10.0, args.train_trajectories)
    train = [generate_trajectory(ToyComplexSpec(seed=s, k=float(k), n_frames=100, temperature=args.temperature))
             for s, k in enumerate(ks)]
    draw = np.exp(np.random.default_rng(0).uniform(math.log(0.5), math.log(10.0), args.complexes))
    held = [generate_trajectory(ToyComplexSpec(seed=500 + i, k=float(k), n_frames=30,
                                               temperature=args.temperature))
            for i, k in enumerate(draw)]
    frames = range(args.interval + 1, 31)
    config = ModelConfig(feature_dim=8, prompt_dim=8, hidden=32, layers=2, dropout=0.0)
    for seed in (int(s) for s in args.seeds.split(",")):
        start = time.perf_counter()
        untrained = space_shift_analysis(MDModel(config, seed=seed), held, args.interval, frames)
        model = MDModel(config, seed=seed)
        pretrain(model, train, PretrainConfig(sigma=1e-3, ordering=False, lr=3e-3, lr_decay=0.3,
                                              max_steps=args.steps, epochs=10_000, steps_per_epoch=20,
                                              restore_best=False))
        res = space_shift_analysis(model, held, args.interval, frames)
        print(f"seed {seed}: pre-trained Pearson {res.pearson:.3f} (y = {res.slope:.4g} x + {res.intercept:.4g}), "
              f"untrained {untrained.pearson:.3f}, {time.perf_counter() - start:.0f}s", flush=True)


if __name__ == "__main__":
    main()
