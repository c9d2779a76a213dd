"""Compare training with and without the perceptual term and region masks.

Runs the same seeded recipe twice per seed: once with the full four-part
objective plus border-region masking, and once with the perceptual
weight zeroed and masks disabled.  Reports held-out MAE and
reconstruction L1 for both arms and their means over seeds.

The full three-seed comparison at 1500 iterations takes around twenty
minutes single-threaded; pass --iterations 200 --seeds 0 for a quick
directional look.

Example:
    python3 scripts/run_ablation.py --seeds 0 1 2 --iterations 1500
"""

import argparse
import sys
import time

import numpy as np

from selfstereo import autodiff as ad
from selfstereo.evaluate import evaluate_pair, mean_report
from selfstereo.losses import LossWeights
from selfstereo.network import NetworkConfig, forward_pass
from selfstereo.synth import SceneSampler
from selfstereo.trainer import TrainConfig, train


def parse_args(argv):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--iterations", type=int, default=1500)
    parser.add_argument("--train-pairs", type=int, default=32)
    parser.add_argument("--held-out-pairs", type=int, default=4)
    parser.add_argument("--max-disparity", type=int, default=16)
    return parser.parse_args(argv)


def run_arm(scenes, seed, iterations, max_disparity, with_extras):
    train_set, held_out = scenes
    net_config = NetworkConfig(max_disparity=max_disparity, seed=seed)
    train_config = TrainConfig(max_iterations=iterations, seed=seed,
                               use_region_masks=with_extras)
    weights = LossWeights() if with_extras else LossWeights(w_perceptual=0.0)
    start = time.time()
    checkpoint, _ = train(train_set, net_config, train_config, weights=weights)
    reports = []
    for pair in held_out:
        with ad.no_grad():
            d_l, _, _, _ = forward_pass((pair.left, pair.right),
                                        checkpoint.params, net_config)
        reports.append(evaluate_pair(pair, d_l.data, max_disparity))
    agg = mean_report(reports)
    label = "full" if with_extras else "stripped"
    print(f"seed={seed} {label:8s} {time.time() - start:5.0f}s "
          f"MAE={agg.mae:.4f} recon_L1={agg.recon_l1:.5f}", flush=True)
    return agg


def main(argv=None):
    args = parse_args(argv)
    sampler = SceneSampler(max_disparity=args.max_disparity)
    scenes = ([sampler.pair(i) for i in range(args.train_pairs)],
              [sampler.pair(1000 + i) for i in range(args.held_out_pairs)])

    full = [run_arm(scenes, s, args.iterations, args.max_disparity, True)
            for s in args.seeds]
    stripped = [run_arm(scenes, s, args.iterations, args.max_disparity, False)
                for s in args.seeds]

    mae_full = float(np.mean([r.mae for r in full]))
    mae_stripped = float(np.mean([r.mae for r in stripped]))
    l1_full = float(np.mean([r.recon_l1 for r in full]))
    l1_stripped = float(np.mean([r.recon_l1 for r in stripped]))
    print(f"\nmean over seeds {args.seeds}:")
    print(f"  MAE       full={mae_full:.4f}  stripped={mae_stripped:.4f}")
    print(f"  recon L1  full={l1_full:.5f}  stripped={l1_stripped:.5f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
