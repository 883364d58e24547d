"""Compare fine-tuning from pre-trained weights against random initialisation.

Uses the full toggle set (generative + noise + prompt + ordering) and reports
validation RMSE per seed, which is the comparison the ablation grid summarises.
"""
import argparse

import numpy as np

from mdpretrain.downstream import (AFFINITY, DownstreamConfig, labeled_from_trajectory, split_dataset,
                                   synthetic_trajectories, train_downstream)
from mdpretrain.model import MDModel, ModelConfig
from mdpretrain.pretrain import PretrainConfig, pretrain
from mdpretrain.synthmd import ToyComplexSpec, generate_trajectory


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, default=6)
    p.add_argument("--complexes", type=int, default=60)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--tether-pull", type=float, default=0.3)
    args = p.parse_args()

    spec = dict(temperature=0.3, tether_pull=args.tether_pull, feature_dim=8)
    trajs = synthetic_trajectories(args.complexes, seed=1, n_frames=20, k_range=(0.5, 10.0), **spec)
    items = [labeled_from_trajectory(t, AFFINITY, name=str(i)) for i, t in enumerate(trajs)]
    train, val, test = split_dataset(items, (0.6, 0.2, 0.2), seed=0)
    unlabeled = [generate_trajectory(ToyComplexSpec(seed=100 + s, k=float(k), n_frames=100, **spec))
                 for s, k in enumerate(np.geomspace(0.5, 10.0, 8))]
    config = ModelConfig(feature_dim=8, prompt_dim=8, hidden=32, layers=2, dropout=0.0)
    wins = 0
    for seed in range(args.seeds):
        down = DownstreamConfig(epochs=args.epochs, lr=args.lr, batch_size=8, seed=seed)
        base = train_downstream(MDModel(config, seed=seed), train, val, test, down).metrics["val"]["rmse"]
        model = MDModel(config, seed=seed)
        pretrain(model, unlabeled, PretrainConfig(sigma=1e-3, lr=3e-3, lr_decay=0.3, max_steps=args.steps,
                                                  epochs=10_000, steps_per_epoch=20, order_samples=1,
                                                  seed=seed, restore_best=False))
        full = train_downstream(model, train, val, test, down).metrics["val"]["rmse"]
        wins += full <= base
        print(f"seed {seed}: val RMSE pre-trained {full:.3f}, random init {base:.3f}", flush=True)
    print(f"pre-trained matches or beats random init on {wins}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
