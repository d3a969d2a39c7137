"""Command-line entry point: ``docsr <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset, evaluate, nncore, srnet, trainer
from .errors import DocSRError

log = logging.getLogger("docsr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _write_out(data: bytes, out):
    if out:
        Path(out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()


def cmd_gen_data(args):
    corpus_dir = Path(args.corpus)
    files = sorted(f for f in corpus_dir.iterdir() if f.suffix.lower() in (".pgm", ".png"))
    pages = [dataset.load_image(f) for f in files]
    stats = dataset.compute_norm_stats(pages)
    pairs = dataset.sample_corpus(pages, args.count, args.seed, stats, reject_blank=not args.no_reject_blank)
    dataset.write_dataset(pairs, args.out, stats)
    log.info("wrote %d pairs from %d pages to %s (mean %.4f)", len(pairs), len(pages), args.out, stats.mean)


def cmd_train(args):
    cfg = trainer.TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        momentum=args.momentum,
        rng_seed=args.seed,
        activation=args.activation,
        checkpoint_every=args.checkpoint_every,
        validation_fraction=args.val_fraction,
    )
    model, tlog = trainer.train(None, args.dataset, cfg, checkpoint_dir=args.checkpoint_dir)
    srnet.save_model(model, args.out)
    if args.log:
        Path(args.log).write_text(tlog.to_jsonl())
    log.info("saved model to %s", args.out)


def cmd_super_resolve(args):
    model = srnet.load_model(args.model)
    page = dataset.load_image(args.image)
    result = srnet.super_resolve_page(model, page)
    if args.out:
        dataset.save_image(result, args.out)
    else:
        h, w = result.shape
        _write_out(b"P5\n%d %d\n255\n" % (w, h) + result.pixels.tobytes(), None)


def cmd_eval(args):
    model = srnet.load_model(args.model)
    pages = evaluate.load_test_corpus(args.test_dir, args.manifest)
    report = evaluate.evaluate_corpus(model, pages)
    _write_out(evaluate.render_report(report, args.format), args.out)


def grad_check_cases(seed: int):
    """Small seeded layers of every kind plus the full network on one patch."""
    rng = np.random.default_rng(seed)
    A = nncore.Activation
    cases = []
    for k, cin, cout, act in [(5, 1, 4, A.RELU), (1, 4, 3, A.PRELU), (3, 3, 2, A.NONE), (1, 2, 2, A.RELU)]:
        spec = nncore.ConvSpec(cin, cout, k, activation=act)
        params = nncore.he_init(spec, rng.integers(2**31))
        params.biases[:] = rng.normal(0, 0.1, cout)
        if params.slopes is not None:
            params.slopes[:] = rng.uniform(0.1, 0.9, cout)
        x = rng.normal(size=(k + 3, k + 3, cin))
        oh = 4
        cases.append((f"conv{k}x{k}-{act.name.lower()}", [(spec, params)], x, rng.normal(size=(oh, oh, cout))))
    for act in (A.RELU, A.PRELU):
        model = srnet.build_model(act, seed)
        for _, p in model.layers:
            p.biases[:] = rng.normal(0, 0.05, p.biases.shape)
            if p.slopes is not None:
                p.slopes[:] = rng.uniform(0.1, 0.9, p.slopes.shape)
        x = rng.normal(0, 0.3, (16, 16, 1))
        cases.append((f"net-{act.name.lower()}", model.layers, x, rng.normal(0, 0.3, (10, 10, 1))))
    return cases


def cmd_grad_check(args):
    ok = True
    for name, layers, x, target in grad_check_cases(args.seed):
        for rep in nncore.grad_check(layers, x, target, tolerance=args.tol):
            status = "ok" if rep.passed else "FAIL"
            print(f"{name:16s} {rep.parameter_name:18s} max_rel_err={rep.max_relative_error:.3e} {status}")
            ok &= rep.passed
    sys.stdout.flush()
    if not ok:
        raise DocSRError(f"gradient check failed at tolerance {args.tol}")


def cmd_inspect(args):
    raw = Path(args.model).read_bytes()
    model = srnet.model_from_bytes(raw)
    info = {
        "format": srnet.MAGIC.decode(),
        "version": srnet.FORMAT_VERSION,
        "activation": model.activation.name,
        "layers": [
            {"kernel": s.kernel, "in": s.in_channels, "out": s.out_channels,
             "activation": s.activation.name}
            for s, _ in model.layers
        ],
        "parameters": model.num_parameters,
        "norm_stats": {"mean": model.norm_stats.mean, "scale": model.norm_stats.scale},
        "metadata": model.metadata,
        "bytes": len(raw),
    }
    print(json.dumps(info, indent=2, sort_keys=True))


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="docsr", description="Document image super-resolution with a 5-layer CNN.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen-data", help="sample patch pairs from a directory of pages")
    g.add_argument("corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=100_000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--no-reject-blank", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    defaults = trainer.TrainConfig()
    t = sub.add_parser("train", help="train a model on a dataset file")
    t.add_argument("dataset")
    t.add_argument("--out", required=True)
    t.add_argument("--log")
    t.add_argument("--epochs", type=int, default=defaults.epochs)
    t.add_argument("--lr", type=float, default=defaults.learning_rate)
    t.add_argument("--batch-size", type=int, default=defaults.batch_size)
    t.add_argument("--momentum", type=float, default=defaults.momentum)
    t.add_argument("--seed", type=int, default=defaults.rng_seed)
    t.add_argument("--activation", choices=("relu", "prelu"), default=defaults.activation)
    t.add_argument("--checkpoint-every", type=int, default=defaults.checkpoint_every)
    t.add_argument("--checkpoint-dir")
    t.add_argument("--val-fraction", type=float, default=defaults.validation_fraction)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("super-resolve", help="reconstruct one page")
    s.add_argument("model")
    s.add_argument("image")
    s.add_argument("--out")
    s.set_defaults(func=cmd_super_resolve)

    e = sub.add_parser("eval", help="PSNR of model vs bicubic on test pages")
    e.add_argument("model")
    e.add_argument("test_dir")
    e.add_argument("--manifest")
    e.add_argument("--format", choices=("text", "csv", "json"), default="text")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("grad-check", help="finite-difference check of every layer type")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tol", type=float, default=1e-4)
    c.set_defaults(func=cmd_grad_check)

    i = sub.add_parser("inspect", help="print a model file's header and metadata")
    i.add_argument("model")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if not exc.code else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except (DocSRError, OSError, ValueError) as exc:
        print(f"docsr {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
