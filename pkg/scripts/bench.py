"""Time one masked pass over K prompts against K single-prompt passes."""

import argparse

from camp.verify import BENCH_HEADER, bench


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ks", type=int, nargs="+", default=[1, 2, 3, 6, 12])
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--batch-size", type=int, default=32)
    args = ap.parse_args()
    print(BENCH_HEADER)
    for row in bench(args.ks, args.repeats, args.batch_size):
        print(row.row(), flush=True)


if __name__ == "__main__":
    main()
