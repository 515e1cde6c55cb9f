"""``pinet`` command line: verify | expand | train | eval | info.

Exit codes: 0 success, 1 verification failure, 2 usage/input error,
3 integrity error, 4 numerical divergence.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from pinet import data as datamod
from pinet.formats import (IntegrityError, SpecError, load_checkpoint, load_spec,
                           save_checkpoint)
from pinet.oracle import (ExpansionBudgetError, degree_check, equivalence_check,
                          equivalence_sweep, is_polynomial, report_kv, report_text, symbolic_expand)
from pinet.polynet import count_params, init_params, random_model
from pinet.train import DivergenceError, TrainConfig, evaluate, train_loop

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INTEGRITY, EXIT_DIVERGED = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


def _threads() -> int:
    raw = os.environ.get("PINET_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"PINET_THREADS must be an integer, got {raw!r}") from None


def _load_model(args):
    """``(spec, model)`` from --checkpoint, else from --spec (fresh init)."""
    if args.checkpoint:
        path = Path(args.checkpoint)
        if not path.exists():
            raise UsageError(f"checkpoint not found: {path}")
        return load_checkpoint(path)
    if not args.spec:
        raise UsageError("need --spec or --checkpoint")
    path = Path(args.spec)
    if not path.exists():
        raise UsageError(f"spec file not found: {path}")
    try:
        spec = load_spec(path)
    except SpecError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if args.seed is not None:
        spec = type(spec)(spec.blocks, seed=args.seed, inner_bias=spec.inner_bias)
    return spec, init_params(spec)


def _infer_schema(path: Path, task: str | None) -> datamod.CsvSchema:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if "label" in header:
        return datamod.CsvSchema(tuple(c for c in header if c != "label"), ("label",),
                                 task or "classification")
    targets = tuple(c for c in header if c.startswith("y"))
    if not targets:
        targets = (header[-1],)
    return datamod.CsvSchema(tuple(c for c in header if c not in targets), targets,
                             task or "regression")


GENERATORS = {
    "xor": lambda seed: datamod.gen_xor(1, 0.0, seed),
    "xor-noisy": lambda seed: datamod.gen_xor(100, 0.2, seed),
    "product": lambda seed: datamod.gen_product(seed, 256),
    "poly": lambda seed: datamod.gen_poly_target(seed, 2, 3, 256),
}


def _load_data(args) -> datamod.Dataset:
    if args.data and args.gen:
        raise UsageError("give either --data or --gen, not both")
    if args.gen:
        if args.gen not in GENERATORS:
            raise UsageError(f"unknown generator {args.gen!r}; choose from {sorted(GENERATORS)}")
        return GENERATORS[args.gen](args.data_seed)
    if not args.data:
        raise UsageError("need --data PATH or --gen NAME")
    path = Path(args.data)
    if not path.exists():
        raise UsageError(f"data file not found: {path}")
    try:
        return datamod.load_csv(path, _infer_schema(path, args.task))
    except datamod.CsvError as exc:
        raise UsageError(str(exc)) from None


def _emit(text: str, out: str | None):
    sys.stdout.write(text)
    if out:
        Path(out).write_text(text, encoding="utf-8")


def cmd_verify(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    spec, model = _load_model(args)
    reports = [equivalence_check(model, args.trials, args.tol, seed=args.seed or 0)]
    if args.draws > 1:
        draws = [random_model(spec, seed=(args.seed or 0) + i) for i in range(1, args.draws)]
        reports += equivalence_sweep(draws, args.trials, args.tol, seed=args.seed or 0,
                                     workers=_threads())
    if is_polynomial(model):
        reports.append(degree_check(model, expected=model.order,
                                    max_probe=max(10, model.order + 1)))
    text = report_kv(reports) if args.format == "kv" else report_text(reports)
    _emit(text, args.out)
    failed = any(r.fields()["status"] == "FAIL" for r in reports)
    return EXIT_FAIL if failed else EXIT_OK


def _fmt_coeffs(c) -> str:
    return " ".join(repr(float(v)) for v in c)


def cmd_expand(args) -> int:
    _, model = _load_model(args)
    try:
        poly = symbolic_expand(model)
    except ExpansionBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    lines = [f"({','.join(map(str, e))}) -> {_fmt_coeffs(c)}" for e, c in poly.sorted_terms()]
    _emit("\n".join(lines) + ("\n" if lines else ""), args.out)
    return EXIT_OK


def _metrics_path(out: str) -> Path:
    return Path(out).with_suffix(".metrics.csv")


def cmd_train(args) -> int:
    spec, model = _load_model(args)
    ds = _load_data(args)
    try:
        cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
                          momentum=args.momentum, weight_decay=args.weight_decay,
                          seed=args.seed or 0, precision=args.precision)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = args.out or "model.ckpt"
    dump = str(Path(out).with_suffix(".diverged.ckpt"))
    try:
        model, metrics = train_loop(spec, ds, cfg, model=model, dump_path=dump)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    save_checkpoint(out, spec, model)
    _metrics_path(out).write_text(metrics.to_csv(), encoding="utf-8")
    last = metrics.rows[-1]
    line = f"final train_loss: {last['train_loss']!r}"
    if ds.task == "classification":
        line += f"\nfinal train_accuracy: {last['train_acc']!r}"
    print(line)
    print(f"checkpoint: {out}\nmetrics: {_metrics_path(out)}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _, model = _load_model(args)
    ds = _load_data(args)
    try:
        row = evaluate(model, ds)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = f"loss: {row['loss']!r}\n"
    if ds.task == "classification":
        text += f"accuracy: {row['accuracy']!r}\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_info(args) -> int:
    if not args.checkpoint:
        raise UsageError("info needs --checkpoint")
    spec, model = _load_model(args)
    lines = []
    if spec.is_chain:
        lines.append(f"variant: chain of {len(spec.blocks)} blocks")
    for i, b in enumerate(spec.blocks):
        prefix = f"block {i}: " if spec.is_chain else ""
        omega = f" omega={b.w}" if b.variant in ("ncp", "ncp_skip") else ""
        lines.append(f"{prefix}variant: {b.variant} N={b.N} d={b.d} k={b.k} o={b.o}{omega} "
                     f"normalization={b.norm.mode}")
    lines.append(f"order: {model.order}")
    lines.append(f"parameters: {count_params(spec)}")
    for name, arr in model.named().items():
        arr = np.asarray(arr)
        shape = "x".join(map(str, arr.shape))
        lines.append(f"  {name}: shape {shape} norm {float(np.linalg.norm(arr)):.6e}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pinet", description="Polynomial network toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False):
        sp.add_argument("--spec", help="model spec document")
        sp.add_argument("--checkpoint", help="checkpoint file")
        sp.add_argument("--seed", type=int, help="overrides the spec seed")
        sp.add_argument("--out", help="also write the output here")
        if data:
            sp.add_argument("--data", help="CSV file")
            sp.add_argument("--gen", help=f"synthetic data: {', '.join(sorted(GENERATORS))}")
            sp.add_argument("--data-seed", type=int, default=0)
            sp.add_argument("--task", choices=datamod.TASKS)

    v = sub.add_parser("verify", help="check recursive forms against the oracles")
    common(v)
    v.add_argument("--trials", type=int, default=200)
    v.add_argument("--tol", type=float, default=1e-9)
    v.add_argument("--draws", type=int, default=1, help="extra random parameter draws")
    v.add_argument("--format", choices=("text", "kv"), default="text")
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("expand", help="print the monomial expansion")
    common(e)
    e.set_defaults(func=cmd_expand)

    t = sub.add_parser("train", help="train a model")
    common(t, data=True)
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--weight-decay", type=float, default=0.0)
    t.add_argument("--precision", choices=("f32", "f64"), default="f64")
    t.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on data")
    common(ev, data=True)
    ev.set_defaults(func=cmd_eval)

    i = sub.add_parser("info", help="summarize a checkpoint")
    common(i)
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY


if __name__ == "__main__":
    sys.exit(main())
