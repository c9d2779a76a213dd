"""Train the stereo network on synthetic vein scenes and score held-out pairs.

Renders a seeded dataset in memory, runs the self-supervised training
loop, and prints held-out disparity accuracy next to the learning-free
SAD block-match baseline.  Everything is derived from the seeds, so two
invocations with the same arguments produce identical numbers.

Example:
    python3 scripts/run_toy_training.py --iterations 300 --seed 0
"""

import argparse
import sys
import time

from selfstereo import autodiff as ad
from selfstereo.evaluate import block_match_baseline, evaluate_pair, mean_report
from selfstereo.network import NetworkConfig, forward_pass
from selfstereo.synth import SceneSampler
from selfstereo.trainer import TrainConfig, save_checkpoint, train


def parse_args(argv):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--iterations", type=int, default=300)
    parser.add_argument("--train-pairs", type=int, default=32)
    parser.add_argument("--held-out-pairs", type=int, default=4)
    parser.add_argument("--height", type=int, default=64)
    parser.add_argument("--width", type=int, default=128)
    parser.add_argument("--max-disparity", type=int, default=16)
    parser.add_argument("--log-every", type=int, default=25)
    parser.add_argument("--checkpoint-out", default=None,
                        help="also save the final checkpoint here")
    return parser.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    sampler = SceneSampler(height=args.height, width=args.width,
                           max_disparity=args.max_disparity)
    train_set = [sampler.pair(i) for i in range(args.train_pairs)]
    held_out = [sampler.pair(1000 + i) for i in range(args.held_out_pairs)]

    net_config = NetworkConfig(max_disparity=args.max_disparity, seed=args.seed)
    train_config = TrainConfig(max_iterations=args.iterations, seed=args.seed)

    def log(line):
        iteration = int(line.split()[0].split("=")[1])
        if iteration % args.log_every == 0 or iteration == args.iterations - 1:
            print(line, flush=True)

    start = time.time()
    checkpoint, reports = train(train_set, net_config, train_config, log_fn=log)
    print(f"trained {len(reports)} iterations in {time.time() - start:.0f}s; "
          f"final loss {reports[-1].total:.5f}")

    if args.checkpoint_out:
        save_checkpoint(args.checkpoint_out, checkpoint)
        print(f"checkpoint saved to {args.checkpoint_out}")

    learned, baseline = [], []
    for pair in held_out:
        with ad.no_grad():
            d_l, _, _, _ = forward_pass((pair.left, pair.right),
                                        checkpoint.params, net_config)
        learned.append(evaluate_pair(pair, d_l.data, args.max_disparity))
        bm = block_match_baseline(pair, args.max_disparity, 7)
        baseline.append(evaluate_pair(pair, bm, args.max_disparity))

    print("\nheld-out results (mean over pairs):")
    for name, reports_ in (("learned", learned), ("block match", baseline)):
        agg = mean_report(reports_)
        print(f"  {name:12s} MAE={agg.mae:.4f} Out-Noc={agg.outlier_rate_noc:.4f} "
              f"Out-All={agg.outlier_rate_all:.4f} recon_L1={agg.recon_l1:.5f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
