"""Desk-scale training runs with on-disk caching.

A run is identified by a digest of its full configuration.  Artifacts land in
``<cache>/<name>-<digest>/`` (checkpoint, history CSV, metrics JSON).  A
finished run is reused as-is; delete the directory or pass ``force=True`` to
retrain.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ._atomic import atomic_write_text
from .dataset import generate_samples, stack
from .geometry import AugmentationConfig
from .models import (
    ProcessorConfig, TrainConfig, evaluate_metrics, metrics_dict, sign_agreement, train_processor,
)
from .nn import save_checkpoint

log = logging.getLogger(__name__)

REFERENCE_PROCESSOR = (4.3e-4, 5.4e-7, 3.9e-2)
REFERENCE_COMPRESSOR = (1.4e-3, 4.7e-6, 5.0e-2)


@dataclass(frozen=True)
class DeskRun:
    name: str = "desk"
    resolution: int = 64
    train_count: int = 2000
    validation_count: int = 500
    data_seed: int = 7
    skips: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)

    def model_config(self) -> ProcessorConfig:
        return ProcessorConfig(resolution=self.resolution, skips=self.skips)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["augmentation"] = AugmentationConfig().to_dict()
        d["model"] = asdict(self.model_config())
        return d

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def directory(self, cache) -> Path:
        return Path(cache) / f"{self.name}-{self.digest()}"


def default_cache() -> Path:
    return Path(__file__).resolve().parents[2] / "artifacts"


def load_result(run: DeskRun, cache=None) -> dict | None:
    path = run.directory(cache or default_cache()) / "result.json"
    return json.loads(path.read_text()) if path.exists() else None


def execute(run: DeskRun, cache=None, force: bool = False) -> dict:
    """Train and evaluate ``run`` unless a finished result is cached."""
    cache = Path(cache or default_cache())
    if not force:
        cached = load_result(run, cache)
        if cached is not None:
            return cached
    out = run.directory(cache)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "run.json", json.dumps(run.to_dict(), indent=2, sort_keys=True, default=list) + "\n")

    t0 = time.time()
    samples, _ = generate_samples(run.train_count + run.validation_count, run.resolution, run.data_seed)
    images, sdfs = stack(samples)
    n = run.train_count
    rows = ["epoch,train_l1,val_l1,lr"]

    def record(r):
        rows.append(f"{r.epoch},{r.train_l1!r},{r.val_l1!r},{r.lr!r}")
        atomic_write_text(out / "history.csv", "\n".join(rows) + "\n")

    model, history = train_processor(images[:n], sdfs[:n], images[n:], sdfs[n:],
                                     run.model_config(),
                                     run.train, callback=record)
    save_checkpoint(model.state_dict(), out / "checkpoint.sdfw")
    pred = model.predict(images[n:, None])
    report = evaluate_metrics(pred, sdfs[n:, None])
    result = metrics_dict("processor", report)
    result.update(sign_agreement=sign_agreement(pred, images[n:]),
                  first_val_l1=history[0].val_l1, epochs=len(history),
                  seconds=time.time() - t0, reference_processor=list(REFERENCE_PROCESSOR),
                  reference_compressor=list(REFERENCE_COMPRESSOR))
    atomic_write_text(out / "result.json", json.dumps(result, indent=2, sort_keys=True) + "\n")
    return result


def generalization_run(**kw) -> DeskRun:
    return DeskRun(name="generalization", skips=True, **kw)


def ablation_run(**kw) -> DeskRun:
    return DeskRun(name="no-skips", skips=False, **kw)


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description="run the cached desk-scale processor experiments")
    p.add_argument("which", choices=["generalization", "ablation", "both"])
    p.add_argument("--cache", type=Path, default=None)
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--force", action="store_true")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    runs = {"generalization": [generalization_run], "ablation": [ablation_run],
            "both": [generalization_run, ablation_run]}[args.which]
    for make in runs:
        run = make(train=TrainConfig(epochs=args.epochs))
        print(json.dumps(execute(run, args.cache, args.force), sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
