"""``qtransfer`` command line: datagen, pretrain, train, sweep, bounds.

Exit codes: 0 success, 2 usage, 3 format/version, 4 numerical abort.

Every subcommand accepts ``--config FILE``, a flat ``key = value`` text file
whose keys are flag names (``lr-mode`` or ``lr_mode``).  Flags given on the
command line override the file.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
import warnings
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .datagen import DEFAULT_MOTIF, LabeledDataset, TrainTestSplit, gen_dot_condition, gen_tfbs_dataset
from .frontend import NumericalAbort, fit_pca, pretrain_extractor
from .hybrid import HybridModel
from .qsim import Exact, Shots
from .storage import (
    DimensionMismatch,
    FormatError,
    atomic_write_text,
    dumps_json,
    load_checkpoint,
    load_dataset,
    save_checkpoint,
    save_dataset,
    sha256_file,
)
from .train import (
    BoundConstants,
    SweepBase,
    TrainConfig,
    balanced_head,
    bound_table,
    decompose_errors,
    init_model,
    sgd_train,
    sweep,
)

log = logging.getLogger("qtransfer")

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4

SWEEP_COLUMNS = ("axis", "value", "qubits", "target_size", "epochs", "train_loss", "train_acc",
                 "test_loss", "test_acc", "est_proxy", "extractor_unchanged",
                 "shots_test_loss", "shots_loss_deviation")

FIGURE6 = {"axis": "qubits", "values": "8,12,16", "kind": "pca", "epochs": 2, "max_train": 200, "max_test": 200}


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------- helpers


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return v


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _norm(key: str) -> str:
    return key.strip().lstrip("-").lower().replace("_", "-")


def read_config(path) -> list:
    """``(key, value)`` pairs of a flat ``key = value`` file; ``#`` starts a comment."""
    pairs = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    for n, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        pairs.append((key, value))
    return pairs


def config_tokens(pairs, subparser: argparse.ArgumentParser) -> list:
    """Map config keys onto the subcommand's flags (case, ``_`` and ``-`` insensitive)."""
    flags = {}
    for action in subparser._actions:
        for opt in action.option_strings:
            flags[_norm(opt)] = (opt, action.nargs == 0)
        if action.option_strings:
            flags.setdefault(_norm(action.dest), (action.option_strings[0], action.nargs == 0))
    tokens = []
    for key, value in pairs:
        if _norm(key) not in flags or _norm(key) == "config":
            raise UsageError(f"config key {key!r} is not a flag of this command")
        flag, switch = flags[_norm(key)]
        if switch:
            if value.lower() in ("1", "true", "yes"):
                tokens.append(flag)
        else:
            tokens.extend([flag, value])
    return tokens


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(path, args, seeds: dict, inputs: dict, artifacts: dict, started: str, extra=None):
    """Run manifest: everything needed to re-execute the command."""
    manifest = {
        "tool": "qtransfer",
        "tool_version": __version__,
        "command": args.command,
        "config": {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")},
        "seeds": seeds,
        "inputs": {name: {"path": str(p), "sha256": sha256_file(p)} for name, p in inputs.items()},
        "artifacts": {name: {"path": str(p), "sha256": sha256_file(p)} for name, p in artifacts.items()},
        "started": started,
        "finished": _now(),
    }
    if extra:
        manifest.update(extra)
    atomic_write_text(path, dumps_json(manifest))
    return manifest


def _load_split(path) -> TrainTestSplit:
    data = load_dataset(path)
    if not isinstance(data, TrainTestSplit):
        raise UsageError(f"{path}: expected a train+test container, found split '{data.split}'")
    return data


def _require_file(path, what):
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")


# ---------------------------------------------------------------------- commands


def cmd_datagen(args) -> int:
    out = Path(args.out)
    if args.task == "dots":
        if args.n < 2 or args.n % 2:
            raise UsageError(f"--n must be an even integer >= 2 (half single-dot, half double-dot), got {args.n}")
        written = []
        for cond in ("clean", "noisy"):
            split = gen_dot_condition(args.n, cond, args.seed)
            written.append(save_dataset(split, out / f"{cond}.vqcd"))
    else:
        if args.n < 2:
            raise UsageError(f"--n must be >= 2, got {args.n}")
        split = gen_tfbs_dataset(args.n, args.motif, args.gc, args.seed, args.mutation_rate)
        written = [save_dataset(split, out / "tfbs.vqcd")]
    for p in written:
        print(f"wrote {p} and {p.with_suffix('.json').name} (n={args.n}, seed={args.seed})")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    _require_file(args.data, "source dataset")
    data = load_dataset(args.data)
    source = data.train if isinstance(data, TrainTestSplit) else data
    if args.kind == "pca":
        if args.qubits > source.dim:
            raise UsageError(f"--qubits {args.qubits} exceeds the data dimension {source.dim}")
        extractor = fit_pca(source.x, args.qubits)
    else:
        extractor = pretrain_extractor(
            args.kind, source, epochs=args.epochs, lr=args.lr, seed=args.seed, output_dim=args.qubits,
            batch_size=args.batch_size, hidden=tuple(args.hidden), rank=args.rank, lift=args.lift,
            window=args.window,
        )
    save_checkpoint(extractor, args.out)
    acc = extractor.provenance.get("final_source_accuracy")
    print(f"wrote {args.out}: {args.kind} extractor {extractor.input_dim}->{extractor.output_dim}"
          + ("" if acc is None else f", source accuracy {acc:.4f}")
          + f", checksum {extractor.checksum()[:12]}")
    return EXIT_OK


def _train_config(args, epochs=None) -> TrainConfig:
    try:
        return TrainConfig(epochs=args.epochs if epochs is None else epochs, lr=args.lr, lr_mode=args.lr_mode,
                           R=args.R, L=args.L, beta=args.beta, batch_size=args.batch_size, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args) -> int:
    started = _now()
    _require_file(args.extractor, "extractor checkpoint")
    _require_file(args.data, "target dataset")
    obj = load_checkpoint(args.extractor, expect_qubits=args.qubits)
    extractor = obj.extractor if isinstance(obj, HybridModel) else obj
    data = _load_split(args.data)
    if data.train.dim != extractor.input_dim:
        raise DimensionMismatch(
            f"dataset dimension is {data.train.dim} but the extractor expects {extractor.input_dim} inputs")
    config = _train_config(args)
    mode = Exact() if args.shots == 0 else Shots(args.shots, args.seed)
    model = init_model(extractor, args.depth, args.seed, args.init_scale, mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    final, trace = sgd_train(model, data.train, data.test, config)
    init_path, model_path = out / "init.vqcm", out / "model.vqcm"
    trace_path, errors_path = out / "trace.csv", out / "errors.json"
    save_checkpoint(model, init_path)
    save_checkpoint(final, model_path)
    atomic_write_text(trace_path, trace.to_csv())
    if args.oracle_epochs > 0:
        oracle = decompose_errors(final, model, data.train, data.test,
                                  oracle_config=replace(config, epochs=args.oracle_epochs))
    else:
        oracle = decompose_errors(final, model, data.train, data.test,
                                  oracle_min=float(trace.column("train_loss").min()))
    atomic_write_text(errors_path, dumps_json(oracle.as_dict()))
    last = trace.final()
    write_manifest(
        out / "manifest.json", args,
        seeds={"init": args.seed, "shuffle": args.seed, "shots": args.seed if args.shots else None},
        inputs={"extractor": args.extractor, "data": args.data},
        artifacts={"init": init_path, "model": model_path, "trace": trace_path, "errors": errors_path},
        started=started,
        extra={"step_size": trace.step_size, "T_sgd": config.epochs,
               "extractor_checksum": trace.extractor_checksum,
               "final": {"train_loss": last.train_loss, "train_acc": last.train_acc,
                         "test_loss": last.test_loss, "test_acc": last.test_acc}},
    )
    print(f"epochs {config.epochs} step {trace.step_size:.6g}: train loss {last.train_loss:.4f} "
          f"acc {last.train_acc:.4f}, test loss {last.test_loss:.4f} acc {last.test_acc:.4f}; wrote {out}")
    return EXIT_OK


def _apply_preset(args):
    if args.preset != "figure6":
        return
    for key, value in FIGURE6.items():
        if getattr(args, key) is None:
            setattr(args, key, value)


def _extractor_factory(args, data: TrainTestSplit):
    fixed = None
    if args.extractor:
        _require_file(args.extractor, "extractor checkpoint")
        obj = load_checkpoint(args.extractor)
        fixed = obj.extractor if isinstance(obj, HybridModel) else obj
    source = None
    if args.kind in ("mlp", "ttn"):
        if not args.source:
            raise UsageError(f"--kind {args.kind} needs --source (pre-training dataset)")
        _require_file(args.source, "source dataset")
        src = load_dataset(args.source)
        source = src.train if isinstance(src, TrainTestSplit) else src
    cache = {}

    def extractor_for(U):
        if fixed is not None and (args.axis != "qubits" or fixed.output_dim == U):
            if fixed.output_dim != U:
                raise DimensionMismatch(f"extractor output dim is {fixed.output_dim} but the run expects U={U}")
            return fixed
        if args.kind is None:
            raise UsageError("qubit sweeps need --kind (or an extractor matching every U)")
        if U not in cache:
            if args.kind == "pca":
                cache[U] = fit_pca(data.train.x, U)
            else:
                cache[U] = pretrain_extractor(args.kind, source, epochs=args.pretrain_epochs, seed=args.seed,
                                              output_dim=U, lift=args.lift)
        return cache[U]

    return extractor_for


def _shrink(ds: LabeledDataset, size):
    if size is None or size >= len(ds):
        return ds
    return balanced_head(ds, size)


def cmd_sweep(args) -> int:
    started = _now()
    _apply_preset(args)
    if args.axis is None or args.values is None:
        raise UsageError("sweep needs --axis and --values (or --preset figure6)")
    values = _int_list(args.values) if isinstance(args.values, str) else args.values
    if not values:
        raise UsageError("--values is empty")
    axis = args.axis.replace("-", "_")
    if args.epochs is None:
        args.epochs = 30
    _require_file(args.data, "target dataset")
    data = _load_split(args.data)
    train, test = _shrink(data.train, args.max_train), _shrink(data.test, args.max_test)
    if axis == "target_size" and max(values) > len(train):
        raise UsageError(f"target size {max(values)} exceeds the {len(train)} available training samples")
    base = SweepBase(train, test, _extractor_factory(args, data), _train_config(args),
                     qubits=args.qubits, depth=args.depth, init_seed=args.seed, init_scale=args.init_scale)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rows = sweep(axis, values, base)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_COLUMNS, restval="", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    out = Path(args.out)
    atomic_write_text(out, buf.getvalue())
    write_manifest(out.with_suffix(".manifest.json"), args, seeds={"init": args.seed, "shuffle": args.seed},
                   inputs={"data": args.data}, artifacts={"table": out}, started=started)
    print(buf.getvalue(), end="")
    return EXIT_OK


BOUND_FLAGS = {"beta": "--beta", "L": "--L", "R": "--R", "C_FX": "--C-fx", "C_FV": "--C-fv",
               "D_A": "--D-A", "D_B": "--D-B", "M": "--M", "U": "--U"}


def cmd_bounds(args) -> int:
    missing = [flag for key, flag in BOUND_FLAGS.items() if getattr(args, key) is None]
    if missing:
        raise UsageError("missing bound constants: " + ", ".join(missing))
    values = {key: getattr(args, key) for key in BOUND_FLAGS}
    try:
        consts = BoundConstants(**values, T_sgd=args.T_sgd, D=args.D)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = dumps_json(bound_table(consts))
    if args.out:
        atomic_write_text(args.out, text)
    print(text, end="")
    return EXIT_OK


# ------------------------------------------------------------------------ parser


def _add_train_flags(p, sweep_mode=False):
    p.add_argument("--data", required=True, help="target dataset container (.vqcd, train+test)")
    p.add_argument("--qubits", type=_positive_int, default=8)
    p.add_argument("--depth", type=_nonneg_int, default=2)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--epochs", type=_positive_int, default=None if sweep_mode else 30)
    p.add_argument("--lr-mode", choices=("fixed", "theorem3"), default="fixed")
    p.add_argument("--R", type=float)
    p.add_argument("--L", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--batch-size", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-scale", type=float, default=math.pi, help="initial angles uniform in [-s, s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qtransfer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"qtransfer {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate synthetic dataset containers")
    p.add_argument("--config")
    p.add_argument("--task", choices=("dots", "tfbs"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--motif", default=DEFAULT_MOTIF)
    p.add_argument("--gc", type=float, default=0.5, help="background GC content")
    p.add_argument("--mutation-rate", type=float, default=0.2)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("pretrain", help="pre-train (or fit) a frozen extractor on a source dataset")
    p.add_argument("--config")
    p.add_argument("--data", required=True, help="source dataset container")
    p.add_argument("--kind", choices=("pca", "mlp", "ttn"), required=True)
    p.add_argument("--qubits", type=_positive_int, default=8, help="extractor output width")
    p.add_argument("--epochs", type=_nonneg_int, default=20)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=_positive_int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden", type=_int_list, default=[64, 32], help="MLP hidden widths, e.g. 64,32")
    p.add_argument("--rank", type=_positive_int, default=3, help="TT rank")
    p.add_argument("--lift", choices=("none", "kmer"), default="none")
    p.add_argument("--window", type=_positive_int, default=7, help="k-mer window for --lift kmer")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="fine-tune the circuit on a frozen extractor")
    p.add_argument("--config")
    p.add_argument("--extractor", required=True, help="extractor checkpoint (.vqcm)")
    _add_train_flags(p)
    p.add_argument("--shots", type=_nonneg_int, default=0, help="measurement shots for evaluation (0 = exact)")
    p.add_argument("--oracle-epochs", type=_nonneg_int, default=None,
                   help="length of the oracle run for the error decomposition (default 2x epochs; 0 = none)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="one training run per value of an axis")
    p.add_argument("--config")
    p.add_argument("--axis", choices=("qubits", "target-size", "target_size", "shots", "epochs"))
    p.add_argument("--values", type=_int_list)
    p.add_argument("--preset", choices=("figure6",))
    p.add_argument("--extractor", help="fixed extractor checkpoint")
    p.add_argument("--kind", choices=("pca", "mlp", "ttn"), help="build an extractor per qubit count")
    p.add_argument("--source", help="source dataset for --kind mlp/ttn")
    p.add_argument("--pretrain-epochs", type=_nonneg_int, default=10)
    p.add_argument("--lift", choices=("none", "kmer"), default="none")
    p.add_argument("--max-train", type=_positive_int)
    p.add_argument("--max-test", type=_positive_int)
    _add_train_flags(p, sweep_mode=True)
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bounds", help="unit-constant error-bound table")
    p.add_argument("--config")
    for key, flag in BOUND_FLAGS.items():
        kind = float if key in ("beta", "L", "R", "C_FX", "C_FV") else int
        p.add_argument(flag, dest=key, type=kind)
    p.add_argument("--T-sgd", dest="T_sgd", type=int, default=1)
    p.add_argument("--D", dest="D", type=int)
    p.add_argument("--out", help="JSON path")
    p.set_defaults(func=cmd_bounds)
    return parser


def _expand_config(argv: list, parser: argparse.ArgumentParser) -> list:
    """Insert config-file tokens right after the subcommand so explicit flags win."""
    for i, tok in enumerate(argv):
        path = None
        if tok == "--config" and i + 1 < len(argv):
            path, rest = argv[i + 1], argv[:i] + argv[i + 2:]
        elif tok.startswith("--config="):
            path, rest = tok.split("=", 1)[1], argv[:i] + argv[i + 1:]
        if path is not None:
            cmd = next((j for j, t in enumerate(rest) if not t.startswith("-")), None)
            subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
            if cmd is None or rest[cmd] not in subparsers.choices:
                raise UsageError("--config must follow a subcommand")
            tokens = config_tokens(read_config(path), subparsers.choices[rest[cmd]])
            return rest[:cmd + 1] + tokens + rest[cmd + 1:]
    return argv


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _expand_config(argv, parser)
    except UsageError as exc:
        print(f"qtransfer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "train" and args.oracle_epochs is None:
        args.oracle_epochs = 2 * args.epochs
    try:
        return args.func(args)
    except (UsageError, DimensionMismatch) as exc:
        print(f"qtransfer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"qtransfer: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericalAbort as exc:
        print(f"qtransfer: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"qtransfer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
