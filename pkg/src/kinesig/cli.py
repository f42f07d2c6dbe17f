"""Command-line entry point: ``kinesig {synth,train,eval,gradcheck,bench,report,rerun}``.

Exit codes: 0 success, 1 validation error (bad flags, bad input data),
2 runtime failure (divergence, I/O). Diagnostics go to stderr; a short
JSON summary of each run goes to stdout. Every command writes a manifest
next to its outputs; ``kinesig rerun MANIFEST`` replays it.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import LayoutError, load_jsonl

logger = logging.getLogger("kinesig")

MANIFEST_SUFFIX = ".manifest.json"


class UsageError(Exception):
    """Bad command-line usage; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _weights(value: str) -> tuple[float, float, float]:
    try:
        parts = tuple(float(v) for v in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected three comma-separated numbers") from None
    if len(parts) != 3 or any(w < 0 for w in parts):
        raise argparse.ArgumentTypeError("expected three non-negative comma-separated numbers")
    return parts


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _manifest(command: str, argv: list[str], config: dict, seed, outputs: list[str]) -> dict:
    return {
        "command": command,
        "argv": argv,
        "config": config,
        "seed": seed,
        "outputs": outputs,
        "versions": {"kinesig": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }


# -- commands --------------------------------------------------------------
def cmd_synth(args, argv) -> dict:
    from .synth import SynthConfig, generate_dataset

    cfg = SynthConfig(
        n_identities=args.identities, sequences_per_identity=args.sequences, T=args.frames, fps=args.fps,
        seed=args.seed, mode=args.mode, noise_sigma=args.noise,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds = generate_dataset(cfg, out)
    _write_json(Path(str(out) + MANIFEST_SUFFIX), _manifest("synth", argv, cfg.to_dict(), cfg.seed, [str(out)]))
    return {"out": str(out), "sequences": len(ds), "classes": ds.n_classes}


def _train_config(args):
    from .training import TrainConfig

    return TrainConfig(
        model=args.model, temporal=args.temporal, epochs=args.epochs, lr=args.lr, batch_size=args.batch_size,
        seed=args.seed, dropout_p=args.dropout, loss_weights=args.loss_weights,
        early_stop_patience=args.patience, lr_step=args.lr_step, d_model=args.d_model, n_layers=args.layers,
        n_heads=args.heads, k=args.k, velocity=args.velocity, positional=args.positional,
        joint_embedding=args.joint_embedding, share_branches=args.share_branches, residual=args.residual,
        train_fraction=args.train_fraction, dtype=args.dtype,
    )


def cmd_train(args, argv) -> dict:
    from .training import train

    cfg = _train_config(args)
    ds = load_jsonl(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.npz"
    _, metrics = train(ds, cfg, checkpoint=ckpt)
    _write_json(out / "metrics.json", metrics.to_dict())
    outputs = [str(out / "metrics.json"), str(ckpt)]
    _write_json(out / "manifest.json", _manifest("train", argv, {**cfg.to_dict(), "data": args.data}, cfg.seed, outputs))
    head = metrics.head
    return {"out": str(out), "best_epoch": metrics.best_epoch,
            "best_test_acc": metrics.best["test_acc"][head], "final_test_acc": metrics.final["test_acc"][head]}


def cmd_eval(args, argv) -> dict:
    from .data import PrepConfig, SplitSpec, split
    from .models import load_checkpoint
    from .training import evaluate

    model = load_checkpoint(args.checkpoint)
    ds = load_jsonl(args.data)
    if args.split != "all":
        train_ds, test_ds = split(ds, SplitSpec(args.train_fraction, args.seed))
        ds = test_ds if args.split == "test" else train_ds
    result = evaluate(model, ds, PrepConfig())
    out = Path(args.out)
    _write_json(out, result.to_dict())
    cfg = {"checkpoint": args.checkpoint, "data": args.data, "split": args.split, "train_fraction": args.train_fraction}
    _write_json(Path(str(out) + MANIFEST_SUFFIX), _manifest("eval", argv, cfg, args.seed, [str(out)]))
    return {"out": str(out), "accuracy": result.accuracy}


def cmd_gradcheck(args, argv) -> dict:
    from .autodiff import grad_check
    from .models import tiny_batch, tiny_loss, tiny_model

    if not args.tiny:
        raise UsageError("gradcheck runs element-wise finite differences; only --tiny configurations are supported")
    x, y = tiny_batch(seed=args.seed)
    model = tiny_model(args.model, n_layers=args.layers, seed=args.seed)
    report = grad_check(model, tiny_loss(args.model, x, y), tolerance=args.tolerance)
    result = {"model": args.model, "layers": args.layers, **report.to_dict()}
    if args.out:
        out = Path(args.out)
        _write_json(out, result)
        cfg = {"model": args.model, "layers": args.layers, "tolerance": args.tolerance, "tiny": True}
        _write_json(Path(str(out) + MANIFEST_SUFFIX), _manifest("gradcheck", argv, cfg, args.seed, [str(out)]))
    if not report.passed:
        raise GradientMismatch(f"gradient check failed for {report.failures}")
    return {"model": args.model, "passed": True, "max_error": report.max_error}


class GradientMismatch(RuntimeError):
    pass


def cmd_bench(args, argv) -> dict:
    from .bench import BenchConfig, run_benchmark

    cfg = BenchConfig(seeds=tuple(range(args.seeds)), quick=args.quick)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_benchmark(cfg, out)
    _write_json(out / "manifest.json", _manifest("bench", argv, cfg.to_dict(), list(cfg.seeds),
                                                 [str(out / "bench.json")]))
    return {"out": str(out), "checks": result["checks"]}


def cmd_report(args, argv) -> dict:
    from .efficiency import efficiency_report, sequence_shape
    from .models import load_checkpoint
    from .reporting import report, write_report
    from .training import Metrics

    metrics = []
    for path in args.metrics:
        with open(path) as fh:
            d = json.load(fh)
        metrics.append(Metrics(d["model"], d["config"], d["class_names"], [], d["best_epoch"], d["best"], d["final"]))
    effs = []
    for path in args.checkpoints:
        model = load_checkpoint(path)
        X = None
        if args.throughput:
            rng = np.random.default_rng(0)
            X = rng.normal(0.0, 0.5, size=sequence_shape(model, batch=args.throughput_batch))
        effs.append(efficiency_report(Path(path).stem, model, X, duration=args.duration))
    text, data = report(metrics, effs, which=args.which)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(text, data, out / "report.txt", out / "report.json")
    cfg = {"metrics": args.metrics, "checkpoints": args.checkpoints, "which": args.which, "throughput": args.throughput}
    _write_json(out / "manifest.json", _manifest("report", argv, cfg, None, [str(out / "report.txt"), str(out / "report.json")]))
    sys.stdout.write(text)
    return {"out": str(out)}


def cmd_rerun(args, argv) -> dict:
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    old = list(manifest["argv"])
    if args.out:
        if "--out" not in old:
            raise UsageError("manifest command has no --out flag to redirect")
        old[old.index("--out") + 1] = args.out
    if manifest["command"] == "train" and "--checkpoint" in old and args.out:
        i = old.index("--checkpoint")
        old[i + 1] = str(Path(args.out) / Path(old[i + 1]).name)
    code = run(old)
    if code:
        raise RerunFailed(f"replayed command exited with {code}")
    return {"replayed": old}


class RerunFailed(RuntimeError):
    pass


# -- parser ----------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kinesig", description="Keypoint identity transformers: data, training, evaluation, reports.")
    p.add_argument("--version", action="version", version=f"kinesig {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log every epoch")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic keypoint dataset (JSONL)")
    s.add_argument("--mode", default="mixed", choices=["posture-only", "rhythm-only", "micro", "mixed", "stillness"])
    s.add_argument("--identities", type=int, default=10)
    s.add_argument("--sequences", type=int, default=10, help="sequences per identity")
    s.add_argument("--frames", type=int, default=60)
    s.add_argument("--fps", type=float, default=60.0)
    s.add_argument("--noise", type=float, default=0.005)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model and write metrics, checkpoint and manifest")
    t.add_argument("--data", required=True)
    t.add_argument("--model", default="dual", choices=["str", "ttr", "msttr", "dual"])
    t.add_argument("--temporal", default="msttr", choices=["ttr", "msttr"], help="temporal stream of the dual model")
    t.add_argument("--k", type=int, default=9, help="TTR frame stride")
    t.add_argument("--velocity", action="store_true", help="feed frame differences to the temporal stream")
    t.add_argument("--epochs", type=int, default=120)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--dropout", type=float, default=0.2)
    t.add_argument("--loss-weights", type=_weights, default=(1.0, 1.0, 1.0))
    t.add_argument("--positional", type=_on_off, default=True, metavar="{on,off}")
    t.add_argument("--joint-embedding", type=_on_off, default=True, metavar="{on,off}")
    t.add_argument("--share-branches", action="store_true")
    t.add_argument("--residual", action="store_true")
    t.add_argument("--d-model", type=int, default=32)
    t.add_argument("--layers", type=int, default=1)
    t.add_argument("--heads", type=int, default=1)
    t.add_argument("--patience", type=int, default=None)
    t.add_argument("--lr-step", type=int, default=None, help="halve the learning rate every N epochs")
    t.add_argument("--train-fraction", type=float, default=0.8)
    t.add_argument("--dtype", default="float64", choices=["float32", "float64"])
    t.add_argument("--checkpoint", default=None, help="checkpoint path (default OUT/checkpoint.npz)")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=["test", "train", "all"])
    e.add_argument("--train-fraction", type=float, default=0.8)
    e.add_argument("--seed", type=int, default=0, help="split seed")
    e.add_argument("--out", required=True, help="metrics JSON path")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference check of every parameter gradient")
    g.add_argument("--model", default="dual", choices=["str", "ttr", "msttr", "dual"])
    g.add_argument("--tiny", action="store_true", help="use the d_model=8 check configuration")
    g.add_argument("--layers", type=int, default=1)
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None)
    g.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench", help="run the synthetic stream-separation benchmark")
    b.add_argument("--seeds", type=int, default=5, help="number of seeds for the fusion comparison")
    b.add_argument("--quick", action="store_true", help="fewer epochs; for smoke tests only")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("report", help="render accuracy, velocity and efficiency tables")
    r.add_argument("--metrics", nargs="*", default=[])
    r.add_argument("--checkpoints", nargs="*", default=[])
    r.add_argument("--which", default="best", choices=["best", "final"])
    r.add_argument("--throughput", action="store_true", help="measure FPS for each checkpoint")
    r.add_argument("--throughput-batch", type=int, default=8)
    r.add_argument("--duration", type=float, default=0.5)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    m = sub.add_parser("rerun", help="replay the command recorded in a manifest")
    m.add_argument("manifest")
    m.add_argument("--out", default=None, help="redirect the outputs")
    m.set_defaults(func=cmd_rerun)
    return p


def run(argv: list[str] | None = None) -> int:
    from .training import TrainingDiverged

    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = args.func(args, argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (TrainingDiverged, GradientMismatch, RerunFailed, OSError, FloatingPointError, RuntimeError) as exc:
        print(f"kinesig: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, TypeError, LayoutError) as exc:
        print(f"kinesig: invalid input: {exc}", file=sys.stderr)
        return 1
    if args.command != "report":
        print(json.dumps(summary, sort_keys=True))
    return 0


def main() -> None:
    sys.exit(run())
