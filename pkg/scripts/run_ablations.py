"""Directional ablations: K=6 vs K=1, concat vs average, alpha=0.1 vs alpha=0."""

import argparse
import statistics

from camp.experiments import ABLATION_STEPS, ABLATIONS, RUN_HEADER, ablation_config, train_and_evaluate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=ABLATION_STEPS)
    ap.add_argument("--variants", nargs="+", default=list(ABLATIONS), choices=list(ABLATIONS))
    args = ap.parse_args()

    print(RUN_HEADER)
    runs = {v: [] for v in args.variants}
    for variant in args.variants:
        for seed in args.seeds:
            result, _ = train_and_evaluate(ablation_config(variant, seed, args.steps), variant)
            print(result.row(), flush=True)
            runs[variant].append(result)

    print("variant\tmean_t2i_R@1\tmean_segment_cosine")
    for variant, rs in runs.items():
        print(f"{variant}\t{statistics.mean(r.t2i_r1 for r in rs):.4f}\t{statistics.mean(r.segment_cosine for r in rs):.4f}")


if __name__ == "__main__":
    main()
