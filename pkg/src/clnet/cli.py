"""Command-line front end.

    clnet gen-data --preset indoor --samples 3000 --seed 1 --out data.bin
    clnet train --data data.bin --eta 1/4 --epochs 50 --seed 1 --out model.ckpt
    clnet eval --data data.bin --checkpoint model.ckpt --eta 1/4 --out report.txt
    clnet flops --model clnet --eta 1/64 --out clnet_64.txt
    clnet compare --clnet clnet_*.txt --baseline crnet_*.txt --out table.csv

Every command writes ``<out>.manifest.json`` holding the full argument set,
so each artifact can be regenerated from its manifest alone. Outputs are read
back after writing; the exit status is 0 only if that check passes.
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from pathlib import Path

import numpy as np

from . import __version__
from .complexity import FlopReport, compare_series, flop_report, format_comparison
from .datasets import generate_dataset, read_dataset, split_sizes, write_dataset
from .fileio import FormatError
from .models import ARCHITECTURES, SUPPORTED_ETAS, build_model, format_eta, load_checkpoint, parse_eta
from .pipeline import encode, evaluate, read_codewords, write_codewords
from .training import TrainConfig, TrainingDivergedError, train

EXIT_OK = 0
EXIT_USAGE = 2  # argparse's own code
EXIT_MISSING_FILE = 3
EXIT_MISMATCH = 4
EXIT_BAD_FILE = 5
EXIT_INVALID = 6
EXIT_DIVERGED = 7
EXIT_VERIFY = 8

ETA_CHOICES = [format_eta(e) for e in SUPPORTED_ETAS]


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Outputs:
    """Collects written files; re-reads them and records their CRC-32."""

    def __init__(self):
        self.files: dict[str, tuple[Path, object]] = {}

    def add(self, role: str, path, reader=None):
        self.files[role] = (Path(path), reader)

    def verify(self) -> dict:
        out = {}
        for role, (path, reader) in self.files.items():
            try:
                if reader is not None:
                    reader(path)
                raw = path.read_bytes()
            except (OSError, FormatError) as err:
                raise CommandError(EXIT_VERIFY, f"output {path} failed verification: {err}") from None
            out[role] = {"path": path.name, "bytes": len(raw), "crc32": f"{zlib.crc32(raw) & 0xFFFFFFFF:08x}"}
        return out


def _write_text(path, text: str):
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def _require(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CommandError(EXIT_MISSING_FILE, f"no such file: {p}")
    return p


def _manifest(args, outputs: _Outputs, extra: dict | None = None):
    config = {k: v for k, v in sorted(vars(args).items()) if k != "handler"}
    doc = {
        "tool": "clnet",
        "version": __version__,
        "command": args.command,
        "config": config,
        "seed": getattr(args, "seed", None),
        "outputs": outputs.verify(),
    }
    if extra:
        doc.update(extra)
    path = Path(f"{args.out}.manifest.json")
    _write_text(path, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return path


# --------------------------------------------------------------------------- commands


def cmd_gen_data(args) -> int:
    try:
        sizes = split_sizes(args.samples)
        ds, kept = generate_dataset(
            args.samples,
            args.preset,
            args.seed,
            n_subcarriers=args.subcarriers,
            n_antennas=args.antennas,
            subpaths=args.subpaths,
        )
    except ValueError as err:
        raise CommandError(EXIT_INVALID, str(err)) from None
    write_dataset(args.out, ds)
    outputs = _Outputs()
    outputs.add("dataset", args.out, read_dataset)
    stats = {
        "train": sizes[0],
        "val": sizes[1],
        "test": sizes[2],
        "kept_energy_mean": float(np.mean(kept)),
        "kept_energy_min": float(np.min(kept)),
    }
    _manifest(args, outputs, {"stats": stats})
    print(f"samples: train={sizes[0]} val={sizes[1]} test={sizes[2]}")
    print(f"kept energy in first {args.antennas} delay rows: mean={stats['kept_energy_mean']:.4f} min={stats['kept_energy_min']:.4f}")
    return EXIT_OK


def _load_dataset(path):
    _require(path)
    try:
        return read_dataset(path)
    except FormatError as err:
        raise CommandError(EXIT_BAD_FILE, str(err)) from None


def _load_model(path, eta_flag):
    _require(path)
    try:
        model = load_checkpoint(path)
    except FormatError as err:
        raise CommandError(EXIT_BAD_FILE, str(err)) from None
    if eta_flag is not None and parse_eta(eta_flag) != model.eta:
        raise CommandError(
            EXIT_MISMATCH, f"checkpoint {path} was built for eta={format_eta(model.eta)}, not eta={eta_flag}"
        )
    return model


def cmd_train(args) -> int:
    ds = _load_dataset(args.data)
    log_path = args.log or f"{args.out}.log.csv"
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        peak_lr=args.lr,
        seed=args.seed,
        eta=args.eta,
        arch=args.arch,
        dataset_path=str(args.data),
        checkpoint_every=args.checkpoint_every or args.epochs,
        checkpoint_path=str(args.out),
    )
    try:
        config.validate(len(ds.split("train")))
    except ValueError as err:
        raise CommandError(EXIT_INVALID, str(err)) from None
    if args.resume:
        _load_model(args.resume, args.eta)

    def progress(rec):
        if not args.quiet:
            print(
                f"epoch {rec.epoch:4d}  loss {rec.train_loss:.6f}  val {rec.val_nmse_db:8.3f} dB  "
                f"lr {rec.lr:.2e}  {rec.seconds:.1f}s",
                flush=True,
            )

    try:
        _, log = train(config, dataset=ds, resume_from=args.resume, on_epoch=progress)
    except TrainingDivergedError as err:
        raise CommandError(EXIT_DIVERGED, str(err)) from None
    except ValueError as err:
        raise CommandError(EXIT_MISMATCH, str(err)) from None
    _write_text(log_path, log.to_csv(timing=args.timing))
    outputs = _Outputs()
    outputs.add("checkpoint", args.out, load_checkpoint)
    outputs.add("log", log_path)
    _manifest(args, outputs)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_model(args.checkpoint, args.eta)
    ds = _load_dataset(args.data)
    if ds.n_kept != model.na:
        raise CommandError(EXIT_MISMATCH, f"dataset Na={ds.n_kept} does not match checkpoint Na={model.na}")
    report = evaluate(model, ds, args.split)
    outputs = _Outputs()
    _write_text(args.out, report.to_text())
    outputs.add("report", args.out)
    if args.csv:
        _write_text(args.csv, report.to_csv())
        outputs.add("table", args.csv)
    if args.codewords:
        write_codewords(args.codewords, encode(model, ds.split(args.split)))
        outputs.add("codewords", args.codewords, read_codewords)
    _manifest(args, outputs)
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_flops(args) -> int:
    try:
        model = build_model(args.model, args.eta, args.na)
    except ValueError as err:
        raise CommandError(EXIT_INVALID, str(err)) from None
    report = flop_report(model)
    _write_text(args.out, report.to_text())
    outputs = _Outputs()
    outputs.add("summary", args.out)
    if args.csv:
        _write_text(args.csv, report.to_csv())
        outputs.add("table", args.csv)
    _manifest(args, outputs)
    print(report.to_text(), end="")
    return EXIT_OK


def _read_summary(path):
    _require(path)
    try:
        return FlopReport.parse_summary(Path(path).read_text(encoding="utf-8"))
    except (KeyError, ValueError) as err:
        raise CommandError(EXIT_BAD_FILE, f"{path}: not a flops summary ({err})") from None


def cmd_compare(args) -> int:
    if bool(args.clnet) != bool(args.baseline):
        raise CommandError(EXIT_INVALID, "give both --clnet and --baseline summaries, or neither")
    if args.clnet:
        a = [_read_summary(p) for p in args.clnet]
        b = [_read_summary(p) for p in args.baseline]
    else:
        a = [flop_report(build_model("clnet", e, args.na)) for e in SUPPORTED_ETAS]
        b = [flop_report(build_model("crnet-base", e, args.na)) for e in SUPPORTED_ETAS]
    try:
        rows, average = compare_series(a, b)
    except ValueError as err:
        raise CommandError(EXIT_MISMATCH, str(err)) from None
    table = format_comparison(rows, average)
    _write_text(args.out, table)
    outputs = _Outputs()
    outputs.add("table", args.out)
    _manifest(args, outputs)
    print(table, end="")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clnet", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"clnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic angular-delay dataset")
    p.add_argument("--preset", choices=["indoor", "outdoor"], default="indoor")
    p.add_argument("--samples", type=int, default=3000)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--subcarriers", type=int, default=256)
    p.add_argument("--antennas", type=int, default=32)
    p.add_argument("--subpaths", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="train an autoencoder")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", choices=ARCHITECTURES, default="clnet")
    p.add_argument("--eta", choices=ETA_CHOICES, default="1/4")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=2e-3, help="peak learning rate")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--checkpoint-every", type=int, default=0, help="epochs between checkpoints (0: end only)")
    p.add_argument("--resume", help="checkpoint written by an earlier run of the same command")
    p.add_argument("--log", help="TrainLog CSV path (default <out>.log.csv)")
    p.add_argument("--timing", action="store_true", help="add the wall-time column to the log")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="NMSE of a checkpoint on a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--eta", choices=ETA_CHOICES, help="expected compression ratio of the checkpoint")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--csv", help="per-sample table")
    p.add_argument("--codewords", help="also write the split's codewords here")
    p.add_argument("--out", required=True, help="key=value report")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("flops", help="FLOP / parameter report for one model")
    p.add_argument("--model", choices=ARCHITECTURES, default="clnet")
    p.add_argument("--eta", choices=ETA_CHOICES, default="1/4")
    p.add_argument("--na", type=int, default=32)
    p.add_argument("--csv", help="per-layer table")
    p.add_argument("--out", required=True, help="key=value summary")
    p.set_defaults(handler=cmd_flops)

    p = sub.add_parser("compare", help="per-eta flop reduction of CLNet against the baseline")
    p.add_argument("--clnet", nargs="+", help="CLNet flops summaries")
    p.add_argument("--baseline", nargs="+", help="baseline flops summaries")
    p.add_argument("--na", type=int, default=32, help="used when no summaries are given")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except CommandError as err:
        print(f"clnet {args.command}: {err}", file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
