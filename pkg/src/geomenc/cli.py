"""Command-line entry point: ``geomenc {gen,train,eval,infer,query,export}``.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.  Every
command accepts ``--config FILE`` holding ``key = value`` lines (``#``
starts a comment); explicit command-line options override the file.  The
resolved settings are written next to each command's outputs as ``run.cfg``
style files so a run can be repeated from its artifacts.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from ._atomic import atomic_write_bytes, atomic_write_text
from .evaluator import eval_grad_points, eval_points
from .geometry import AugmentationConfig
from .models import (
    CompressorConfig, ModelConfigError, ProcessorConfig, TrainConfig, TrainingDiverged,
    checkpoint_resolution, evaluate_metrics, metrics_dict, models_from_checkpoint,
    processor_from_checkpoint, train_compressor, train_processor,
)
from .nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .pgm import PgmFormatError, field_to_pixels, grid_to_pixels, read_binary_grid, write_pgm

log = logging.getLogger("geomenc")

DEFAULT_LR = 5e-4


class CommandError(Exception):
    """Runtime failure reported with exit code 1."""


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"{source}:{lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def format_config(values: dict) -> str:
    lines = ["# resolved run configuration"]
    for key in sorted(values):
        v = values[key]
        if v is None:
            continue
        if isinstance(v, float):
            v = repr(v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def _run_config(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v)
            for k, v in vars(args).items() if k not in ("func", "config", "verbose")}


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser, path: str) -> None:
    try:
        values = parse_config_text(Path(path).read_text(), path)
    except OSError as exc:
        parser.exit(1, f"error: cannot read config {path}: {exc}\n")
    except ValueError as exc:
        parser.exit(2, f"error: {exc}\n")
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    command = values.pop("command", None)
    if command is not None and command != sub.prog.split()[-1]:
        sub.error(f"{path} was written by '{command}', not '{sub.prog.split()[-1]}'")
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("config", "help"):
            sub.error(f"unknown config key {key!r} in {path}")
        if action.nargs == 0:
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            try:
                defaults[key] = action.type(raw) if action.type else raw
            except (TypeError, ValueError):
                sub.error(f"config key {key!r}: invalid value {raw!r}")
            if action.choices and defaults[key] not in action.choices:
                sub.error(f"config key {key!r}: {raw!r} not in {sorted(action.choices)}")
    for key in defaults:
        actions[key].required = False
    sub.set_defaults(**defaults)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    val = args.val if args.val is not None else min(500, args.count // 2)
    if not 0 <= val < args.count:
        raise _Usage(f"--val {val} must be below --count {args.count}")
    args.val = val
    cfg = AugmentationConfig()
    manifest = ds.generate_dataset(args.count, args.res, args.seed, args.out, cfg, val)
    atomic_write_text(Path(str(args.out) + ".run.cfg"), format_config(_run_config(args)))
    print(f"wrote {manifest.count} samples at {manifest.resolution}x{manifest.resolution} to {args.out}")
    print(f"train {len(manifest.train_range)}  validation {len(manifest.validation_range)}  "
          f"degenerate retries {manifest.retries}")
    return 0


def _load_split(path, val_override=None):
    samples = ds.load_dataset(path)
    manifest = ds.load_manifest(path)
    val = val_override if val_override is not None else (manifest.validation_count if manifest else 0)
    train_ids, val_ids = ds.split(len(samples), val)
    return samples, train_ids, val_ids


def _write_history(path: Path, history) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_l1", "val_l1", "lr"])
    for r in history:
        w.writerow([r.epoch, repr(r.train_l1), repr(r.val_l1), repr(r.lr)])
    atomic_write_text(path, buf.getvalue())


def cmd_train(args) -> int:
    if args.stage == "compressor" and args.processor_ckpt is None:
        raise _Usage("--stage compressor requires --processor-ckpt")
    samples, train_ids, val_ids = _load_split(args.dataset, args.val)
    images, sdfs = ds.stack(samples)
    res = images.shape[-1]
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, lr=args.lr, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "run.cfg", format_config(_run_config(args)))
    tr, va = list(train_ids), list(val_ids)
    vx = images[va] if va else None
    vy = sdfs[va] if va else None
    extra = {}
    try:
        if args.stage == "processor":
            model, history = train_processor(images[tr], sdfs[tr], vx, vy,
                                             ProcessorConfig(resolution=res, skips=not args.no_skips), tcfg)
        else:
            tensors = load_checkpoint(args.processor_ckpt)
            if checkpoint_resolution(tensors) != res:
                raise CommandError(f"processor checkpoint resolution {checkpoint_resolution(tensors)} "
                                   f"!= dataset resolution {res}")
            processor = processor_from_checkpoint(tensors)
            extra = processor.state_dict()
            model, history = train_compressor(processor, images[tr], sdfs[tr], vx, vy,
                                              CompressorConfig(resolution=res), tcfg,
                                              ground_truth_input=args.ground_truth_input)
    except TrainingDiverged as exc:
        save_checkpoint({**extra, **exc.state}, out / "checkpoint.sdfw")
        _write_history(out / "history.csv", exc.history)
        raise CommandError(f"{exc}; last good parameters saved to {out / 'checkpoint.sdfw'}") from exc
    save_checkpoint({**extra, **model.state_dict()}, out / "checkpoint.sdfw")
    _write_history(out / "history.csv", history)
    last = history[-1]
    print(f"{args.stage}: {len(history)} epochs, final train_l1 {last.train_l1:.6g} val_l1 {last.val_l1:.6g}")
    return 0


def _pick_model(models: dict, name: str | None):
    if name is None:
        for name in ("compressor", "processor", "oracle"):
            if name in models:
                break
    if name not in models:
        raise CommandError(f"checkpoint has no {name} model (has {sorted(models)})")
    return name, models[name]


def cmd_eval(args) -> int:
    samples, train_ids, val_ids = _load_split(args.dataset, args.val)
    tensors = load_checkpoint(args.ckpt)
    res_ckpt = checkpoint_resolution(tensors)
    res_data = samples[0].image.shape[0]
    if res_ckpt != res_data:
        raise CommandError(f"checkpoint resolution {res_ckpt} != dataset resolution {res_data}")
    ids = {"validation": val_ids, "train": train_ids, "all": range(len(samples))}[args.split]
    if len(ids) == 0:
        raise CommandError(f"the {args.split} split is empty")
    name, model = _pick_model(models_from_checkpoint(tensors), args.model)
    images, sdfs = ds.stack([samples[i] for i in ids])
    report = evaluate_metrics(model.predict(images[:, None]), sdfs[:, None])
    text = json.dumps(metrics_dict(name, report), indent=2) + "\n"
    if args.json:
        atomic_write_text(Path(args.json), text)
    sys.stdout.write(text)
    return 0


def _load_field(path, index: int) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path, allow_pickle=False)
        if arr.ndim != 2:
            raise CommandError(f"{path}: expected a 2-d field, got shape {arr.shape}")
        return arr
    samples = ds.load_dataset(path)
    if not 0 <= index < len(samples):
        raise CommandError(f"{path}: index {index} out of range (0..{len(samples) - 1})")
    return samples[index].sdf


def cmd_infer(args) -> int:
    grid = read_binary_grid(args.image)
    tensors = load_checkpoint(args.ckpt)
    res = checkpoint_resolution(tensors)
    if grid.shape != (res, res):
        raise CommandError(f"image is {grid.shape[1]}x{grid.shape[0]}, checkpoint expects {res}x{res}")
    name, model = _pick_model(models_from_checkpoint(tensors), args.model)
    pred = model.predict(grid[None, None].astype(np.float32))[0, 0]
    buf = io.BytesIO()
    np.save(buf, pred.astype(np.float32), allow_pickle=False)
    atomic_write_bytes(Path(args.out), buf.getvalue())
    if args.pgm:
        write_pgm(args.pgm, field_to_pixels(pred))
    print(f"{name}: wrote {res}x{res} field to {args.out}")
    return 0


def read_points_csv(text: str, source: str = "<points>") -> np.ndarray:
    pts = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), 1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 2:
            raise CommandError(f"{source}:{lineno}: expected 'x,y', got {','.join(row)!r}")
        try:
            pts.append((float(row[0]), float(row[1])))
        except ValueError:
            if lineno == 1 and not pts:
                continue  # header
            raise CommandError(f"{source}:{lineno}: non-numeric coordinates {','.join(row[:2])!r}") from None
    arr = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(arr)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(arr), axis=1))[0])
        raise CommandError(f"{source}: point {bad} is not finite")
    return arr


def format_points_csv(points, values=None, grads=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["x", "y"] + (["value"] if values is not None else []) + (["dx", "dy"] if grads is not None else [])
    w.writerow(header)
    for k, (x, y) in enumerate(np.asarray(points, dtype=np.float64)):
        row = [repr(float(x)), repr(float(y))]
        if values is not None:
            row.append(repr(float(values[k])))
        if grads is not None:
            row += [repr(float(grads[0][k])), repr(float(grads[1][k]))]
        w.writerow(row)
    return buf.getvalue()


def cmd_query(args) -> int:
    grid = _load_field(args.sdf, args.index)
    pts = read_points_csv(Path(args.points).read_text(), str(args.points))
    values = eval_points(grid, pts)
    grads = eval_grad_points(grid, pts) if args.grad else None
    text = format_points_csv(pts, values, grads)
    if args.out:
        atomic_write_text(Path(args.out), text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_export(args) -> int:
    src = Path(args.input)
    if src.suffix == ".npy":
        pixels = field_to_pixels(_load_field(src, 0))
    else:
        samples = ds.load_dataset(src)
        if not 0 <= args.index < len(samples):
            raise CommandError(f"{src}: index {args.index} out of range (0..{len(samples) - 1})")
        s = samples[args.index]
        pixels = grid_to_pixels(s.image) if args.what == "image" else field_to_pixels(s.sdf)
    write_pgm(args.out, pixels)
    print(f"wrote {pixels.shape[1]}x{pixels.shape[0]} PGM to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class _Usage(Exception):
    pass


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geomenc", description="Signed-distance geometry encoding toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--count", type=_positive, required=True)
    g.add_argument("--res", type=int, default=128)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--val", type=int, default=None, help="validation samples (default min(500, count/2))")
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train the processor or the compressor")
    t.add_argument("--dataset", type=Path, required=True)
    t.add_argument("--stage", choices=("processor", "compressor"), required=True)
    t.add_argument("--epochs", type=_positive, default=200)
    t.add_argument("--lr", type=float, default=DEFAULT_LR)
    t.add_argument("--batch", type=_positive, default=32)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--val", type=int, default=None, help="override the manifest's validation count")
    t.add_argument("--out", type=Path, required=True, help="output directory")
    t.add_argument("--processor-ckpt", type=Path, default=None)
    t.add_argument("--no-skips", action="store_true", help="train the processor without skip connections")
    t.add_argument("--ground-truth-input", action="store_true",
                   help="feed the compressor ground-truth fields instead of processor outputs")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="L1/L2/Linf metrics of a checkpoint on a dataset split")
    e.add_argument("--dataset", type=Path, required=True)
    e.add_argument("--ckpt", type=Path, required=True)
    e.add_argument("--split", choices=("validation", "train", "all"), default="validation")
    e.add_argument("--val", type=int, default=None)
    e.add_argument("--model", choices=("processor", "compressor", "oracle"), default=None)
    e.add_argument("--json", type=Path, default=None)
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="predict the field of one PGM image")
    i.add_argument("--image", type=Path, required=True)
    i.add_argument("--ckpt", type=Path, required=True)
    i.add_argument("--out", type=Path, required=True, help=".npy float32 field")
    i.add_argument("--model", choices=("processor", "compressor", "oracle"), default=None)
    i.add_argument("--pgm", type=Path, default=None, help="also write a grey-level view")
    i.set_defaults(func=cmd_infer)

    q = sub.add_parser("query", help="interpolate a field at points from a CSV")
    q.add_argument("--sdf", type=Path, required=True, help=".npy field or .sdfd dataset")
    q.add_argument("--index", type=int, default=0, help="sample index when --sdf is a dataset")
    q.add_argument("--points", type=Path, required=True)
    q.add_argument("--grad", action="store_true")
    q.add_argument("--out", type=Path, default=None)
    q.set_defaults(func=cmd_query)

    x = sub.add_parser("export", help="write a dataset image/field or a .npy field as PGM")
    x.add_argument("--in", dest="input", type=Path, required=True)
    x.add_argument("--index", type=int, default=0)
    x.add_argument("--what", choices=("image", "sdf"), default="image")
    x.add_argument("--out", type=Path, required=True)
    x.set_defaults(func=cmd_export)

    for sp in (g, t, e, i, q, x):
        sp.add_argument("--config", default=None, help="key = value file of option defaults")
    return p


def _option_value(argv, flag):
    for k, a in enumerate(argv):
        if a == flag and k + 1 < len(argv):
            return argv[k + 1]
        if a.startswith(flag + "="):
            return a.split("=", 1)[1]
    return None


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((a for a in argv if a in subparsers.choices), None)
    config = _option_value(argv, "--config")
    if command and config:
        _apply_config(parser, subparsers.choices[command], config)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _Usage as exc:
        subparsers.choices[args.command].error(str(exc))
    except (CommandError, OSError, ds.DatasetFormatError, CheckpointError, PgmFormatError,
            ModelConfigError, ds.GenerationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
