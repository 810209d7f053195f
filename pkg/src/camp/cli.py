"""Command-line entry point: ``camp {train,eval,equivcheck,gradcheck,attnmaps,bench}``.

Every command prints tab-separated rows to stdout and exits nonzero on any
validation failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from camp.config import ConfigError, dump_config, load_config

log = logging.getLogger("camp")

EXIT_OK = 0
EXIT_FAIL = 1


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, dest="K")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--template-mode", choices=["adaptive", "shared_apt", "fixed", "minimal"])
    p.add_argument("--combine-mode", choices=["concat", "average"])
    p.add_argument("--negation", action="store_true", default=None, dest="include_negation", help="add the negation prompts and their loss")
    p.add_argument("--unfrozen-layers", type=int, dest="L")
    p.add_argument("--learnable-vocab", action="store_true", default=None)
    p.add_argument("--steps", type=int, dest="total_steps")
    p.add_argument("--batch-size", type=int)


def _config_from(args: argparse.Namespace):
    keys = ("seed", "K", "alpha", "beta", "template_mode", "combine_mode", "include_negation", "L", "learnable_vocab", "total_steps", "batch_size")
    overrides = {k: getattr(args, k) for k in keys}
    cfg = load_config(args.config, **overrides)
    if cfg.warmup_steps > cfg.total_steps:
        cfg = cfg.replace(warmup_steps=cfg.total_steps)
    return cfg


def _split(cfg, name: str):
    from camp import data

    train, held = data.generate_split(cfg.n_train, cfg.n_eval, cfg.seed)
    return {"train": train, "eval": held}[name]


# -- commands --------------------------------------------------------------


def cmd_train(args) -> int:
    from camp.evaluate import REPORT_HEADER, evaluate
    from camp.trainer import Trainer, save_checkpoint

    cfg = _config_from(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "metrics.tsv"
    log_path.unlink(missing_ok=True)
    (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    trainer = Trainer(cfg)
    trainer.model.vocab.save(out / "vocab.txt")
    trainer.train(log_path=log_path, progress_every=args.progress)
    save_checkpoint(trainer.model, trainer.opt, out / "model.ckpt")
    print(REPORT_HEADER)
    for rep in evaluate(trainer.model, _split(cfg, "eval")):
        print(rep.row())
    return EXIT_OK


def cmd_eval(args) -> int:
    from camp import data
    from camp.evaluate import REPORT_HEADER, evaluate
    from camp.trainer import load_checkpoint

    model, _, cfg = load_checkpoint(args.checkpoint)
    samples = data.load_external_corpus(args.corpus) if args.corpus else _split(cfg, args.split)
    if not samples:
        log.error("no samples to evaluate")
        return EXIT_FAIL
    print(REPORT_HEADER)
    for rep in evaluate(model, samples):
        print(rep.row())
    return EXIT_OK


def cmd_equivcheck(args) -> int:
    from camp.verify import EQUIV_HEADER, equivalence_sweep

    negation = {"both": (False, True), "on": (True,), "off": (False,)}[args.negation_cases]
    cases = equivalence_sweep(args.ks, args.seeds, negation, args.tol, reset_positions=not args.no_position_reset)
    print(EQUIV_HEADER)
    for c in cases:
        print(c.row())
    failed = sum(not c.passed for c in cases)
    print(f"summary\t{len(cases) - failed}/{len(cases)} passed\tmax_abs_diff\t{max(c.max_abs_diff for c in cases):.3e}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_gradcheck(args) -> int:
    from camp.verify import GRAD_HEADER, gradient_sweep

    results = gradient_sweep(args.components.split(","), coords=args.coords, seed=args.seed)
    print(GRAD_HEADER)
    for r in results:
        print(r.row())
    bad = [r for r in results if (r.frozen and r.grad_max != 0.0) or (not r.frozen and not r.max_rel_err < args.tol)]
    worst = max((r.max_rel_err for r in results if not r.frozen), default=0.0)
    print(f"summary\t{len(results) - len(bad)}/{len(results)} passed\tmax_rel_err\t{worst:.3e}")
    return EXIT_FAIL if bad else EXIT_OK


def cmd_attnmaps(args) -> int:
    from camp import data
    from camp.trainer import load_checkpoint
    from camp.vision_encoder import attention_maps_by_segment

    model, _, cfg = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    print("id\tsegment\tsum\targmax_patch\tfiles")
    ok = True
    for sid in args.ids:
        if not 0 <= sid < len(data.ALL_FACTORS):
            log.error("sample id %d outside [0, %d)", sid, len(data.ALL_FACTORS))
            return EXIT_FAIL
        maps = attention_maps_by_segment(data.make_sample(sid).image, model.vision, cfg.K)
        paths = maps.save(out, f"sample{sid:03d}")
        for s, (m, arg) in enumerate(zip(maps.maps, maps.argmax_patches()), start=1):
            total = float(m.sum())
            ok &= abs(total - 1.0) < 1e-5
            print(f"{sid}\t{s}\t{total:.8f}\t{arg}\t{paths[2 * s - 2].name},{paths[2 * s - 1].name}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_bench(args) -> int:
    from camp.verify import BENCH_HEADER, bench

    rows = bench(args.ks, args.repeats, args.batch_size)
    print(BENCH_HEADER)
    for r in rows:
        print(r.row())
    if args.max_ratio is not None:
        over = [r for r in rows if r.K > 1 and r.ratio >= args.max_ratio]
        return EXIT_FAIL if over else EXIT_OK
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camp", description="Multi-prompt contrastive text-image embeddings on a synthetic corpus.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train and write checkpoint, metrics log, config and vocabulary")
    _add_train_flags(p)
    p.add_argument("--out", default="runs/default")
    p.add_argument("--progress", type=int, default=100, help="log every N steps (0 = silent)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="retrieval recall in both directions")
    p.add_argument("checkpoint")
    p.add_argument("--split", choices=["train", "eval"], default="eval")
    p.add_argument("--corpus", help="external corpus directory with index.tsv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("equivcheck", help="single masked pass vs one pass per prompt")
    p.add_argument("--ks", type=_int_list, default=[1, 3, 6])
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--negation-cases", choices=["both", "on", "off"], default="both")
    p.add_argument("--no-position-reset", action="store_true", help="debug: number prompt tokens consecutively (expected to fail)")
    p.set_defaults(func=cmd_equivcheck)

    p = sub.add_parser("gradcheck", help="backward vs central finite differences")
    p.add_argument("--components", default="con,div,neg,total")
    p.add_argument("--coords", type=int, default=6, help="entries probed per tensor")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("attnmaps", help="per-segment pooling attention maps as CSV + PGM")
    p.add_argument("checkpoint")
    p.add_argument("--ids", type=_int_list, default=[0])
    p.add_argument("--out", default="attnmaps")
    p.set_defaults(func=cmd_attnmaps)

    p = sub.add_parser("bench", help="single-pass vs per-prompt text encoding time")
    p.add_argument("--ks", type=_int_list, default=[1, 2, 3, 6])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-ratio", type=float, help="fail if any K>1 ratio reaches this value")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, FloatingPointError) as e:
        log.error("%s", e)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
