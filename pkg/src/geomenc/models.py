"""Processor (U-Net), compressor (8x autoencoder), training loops and metrics.

Models take ``(N, 1, R, R)`` float32 batches.  The processor maps binary
occupancy to a signed distance field; the compressor maps a field to a
latent code with exactly ``R*R/8`` scalars and back.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .field import DegenerateFieldError, signed_distance_field
from .nn import (
    DTYPE, AdamState, Conv, ConvSpec, LeakyReLU, NonFiniteGradientError, PlateauSchedule, adam_step, mae_loss,
)
from .nn.checkpoint import tensor_digest

log = logging.getLogger(__name__)


class ModelConfigError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    """Loss became non-finite.

    The model has been reset to its parameters after the last finished epoch;
    ``state`` is that model's full checkpoint dictionary.
    """

    def __init__(self, msg, state, history):
        super().__init__(msg)
        self.state = state
        self.history = history


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

class Sequential:
    """Chain of ``(name, Conv)`` layers each optionally followed by an activation."""

    def __init__(self, layers: list[tuple[str, Conv, float | None]]):
        self.convs = [(name, conv) for name, conv, _ in layers]
        self.steps = []
        for _, conv, slope in layers:
            self.steps.append(conv)
            if slope is not None:
                self.steps.append(LeakyReLU(slope))

    def forward(self, x, keep=True):
        for step in self.steps:
            x = step.forward(x, keep)
        return x

    def backward(self, g, need_input_grad=True):
        for i, step in enumerate(reversed(self.steps)):
            last = i == len(self.steps) - 1
            if isinstance(step, Conv):
                g = step.backward(g, need_input_grad=need_input_grad or not last)
            else:
                g = step.backward(g)
        return g


def _layer(name, cin, cout, k, s, p, rng, slope, init, transposed=False):
    """``(name, Conv, slope)``; with ``init="rectifier"`` the conv is scaled for the activation after it."""
    layer_init = init if slope is not None else "fan_in"
    return name, Conv(ConvSpec(cin, cout, k, s, p, transposed), rng, layer_init, slope or 0.0), slope


class _Model:
    """Shared parameter bookkeeping; subclasses define ``blocks`` and ``prefix``."""

    prefix = "model"
    blocks: dict[str, Sequential]

    def named_convs(self):
        for block_name, block in self.blocks.items():
            for name, conv in block.convs:
                yield f"{block_name}.{name}", conv

    def parameters(self) -> dict[str, np.ndarray]:
        out = {}
        for name, conv in self.named_convs():
            out[f"{self.prefix}.{name}.weight"] = conv.weight
            out[f"{self.prefix}.{name}.bias"] = conv.bias
        return out

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for name, conv in self.named_convs():
            out[f"{self.prefix}.{name}.weight"] = conv.grad_weight
            out[f"{self.prefix}.{name}.bias"] = conv.grad_bias
        return out

    def load_parameters(self, tensors: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(tensors)
        if missing:
            raise ModelConfigError(f"checkpoint lacks tensors {sorted(missing)[:3]}...")
        for name, arr in params.items():
            if tensors[name].shape != arr.shape:
                raise ModelConfigError(f"{name}: checkpoint shape {tensors[name].shape} != model {arr.shape}")
            arr[...] = tensors[name]

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"{self.prefix}.config.{k}": np.asarray(v, dtype=np.float32)
               for k, v in self.config.checkpoint_fields().items()}
        out.update({k: v.copy() for k, v in self.parameters().items()})
        return out

    def _check_input(self, x):
        r = self.config.resolution
        if x.ndim != 4 or x.shape[1:] != (1, r, r):
            raise ModelConfigError(f"expected input (N, 1, {r}, {r}), got {x.shape}")

    def predict(self, x, batch_size: int = 32) -> np.ndarray:
        x = np.asarray(x, dtype=DTYPE)
        return np.concatenate([self.forward(x[i:i + batch_size], keep=False)
                               for i in range(0, len(x), batch_size)])


# ---------------------------------------------------------------------------
# processor
# ---------------------------------------------------------------------------

def _check_init(init):
    if init not in ("fan_in", "rectifier"):
        raise ModelConfigError(f"unknown init {init!r}; expected 'fan_in' or 'rectifier'")


@dataclass(frozen=True)
class ProcessorConfig:
    resolution: int = 128
    channels: tuple[int, ...] = (16, 32, 64, 128)
    skips: bool = True
    convs_per_stage: int = 2
    encoder_slope: float = 0.2
    decoder_slope: float = 0.0
    init: str = "fan_in"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        stages = len(self.channels)
        if stages < 1 or self.resolution % (2 ** stages) or self.resolution < 2 ** stages:
            raise ModelConfigError(
                f"resolution {self.resolution} is not divisible by 2**{stages} encoder stages")
        if self.convs_per_stage < 1:
            raise ModelConfigError(f"convs_per_stage must be at least 1, got {self.convs_per_stage}")
        _check_init(self.init)

    def checkpoint_fields(self) -> dict:
        return {"resolution": self.resolution, "channels": list(self.channels),
                "skips": int(self.skips), "convs_per_stage": self.convs_per_stage,
                "encoder_slope": self.encoder_slope, "decoder_slope": self.decoder_slope}


class Processor(_Model):
    prefix = "processor"

    def __init__(self, config: ProcessorConfig = ProcessorConfig(), seed: int | None = 0):
        self.config = config
        rng = None if seed is None else np.random.default_rng(seed)
        ch = config.channels
        es, ds = config.encoder_slope, config.decoder_slope
        self.blocks: dict[str, Sequential] = {}
        for s, c in enumerate(ch):
            cin = 1 if s == 0 else ch[s - 1]
            layers = [_layer("down", cin, c, 4, 2, 1, rng, es, config.init)]
            layers += [_layer(f"conv{k}", c, c, 3, 1, 1, rng, es, config.init)
                       for k in range(config.convs_per_stage)]
            self.blocks[f"enc{s}"] = Sequential(layers)
        self.up_channels = []
        for d in reversed(range(len(ch))):
            cout = ch[d - 1] if d > 0 else ch[0]
            skip_ch = (ch[d - 1] if d > 0 else 1) if config.skips else 0
            self.up_channels.append(cout)
            self.blocks[f"up{d}"] = Sequential(
                [_layer("up", ch[d], cout, 4, 2, 1, rng, ds, config.init, transposed=True)])
            layers = [_layer(f"conv{k}", cout + (skip_ch if k == 0 else 0), cout, 3, 1, 1, rng, ds, config.init)
                      for k in range(config.convs_per_stage)]
            self.blocks[f"dec{d}"] = Sequential(layers)
        self.up_channels.reverse()
        self.blocks["head"] = Sequential([_layer("out", ch[0], 1, 3, 1, 1, rng, None, config.init)])

    def forward(self, x, keep=True):
        self._check_input(x)
        x = x.reshape(len(x), x.shape[2], x.shape[3], 1)
        n = len(self.config.channels)
        feats = []
        h = x
        for s in range(n):
            h = self.blocks[f"enc{s}"].forward(h, keep)
            feats.append(h)
        for d in reversed(range(n)):
            h = self.blocks[f"up{d}"].forward(h, keep)
            if self.config.skips:
                h = np.concatenate([h, feats[d - 1] if d > 0 else x], axis=-1)
            h = self.blocks[f"dec{d}"].forward(h, keep)
        y = self.blocks["head"].forward(h, keep)
        return y.reshape(len(y), 1, y.shape[1], y.shape[2])

    def backward(self, g):
        n = len(self.config.channels)
        g = self.blocks["head"].backward(g.reshape(len(g), g.shape[2], g.shape[3], 1))
        skip_grads = [None] * n
        for d in range(n):
            g = self.blocks[f"dec{d}"].backward(g)
            if self.config.skips:
                c = self.up_channels[d]
                if d > 0:
                    skip_grads[d - 1] = g[..., c:]
                g = np.ascontiguousarray(g[..., :c])
            g = self.blocks[f"up{d}"].backward(g)
        for s in reversed(range(n)):
            if skip_grads[s] is not None:
                g = g + skip_grads[s]
            g = self.blocks[f"enc{s}"].backward(g, need_input_grad=s > 0)


# ---------------------------------------------------------------------------
# compressor
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompressorConfig:
    resolution: int = 128
    channels: tuple[int, ...] = (8, 8)
    bottleneck: tuple[int, int, int] | None = None
    convs_per_stage: int = 1
    encoder_slope: float = 0.2
    decoder_slope: float = 0.0
    # the plain fan-in init stalls this skip-free chain at a constant output
    init: str = "rectifier"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        _check_init(self.init)
        r, stages = self.resolution, len(self.channels)
        if stages < 1 or r % (2 ** stages):
            raise ModelConfigError(f"resolution {r} is not divisible by 2**{stages}")
        side = r // 2 ** stages
        if self.bottleneck is None:
            if (r * r) % (8 * side * side):
                raise ModelConfigError(f"no integer channel count gives an 8x code at resolution {r}")
            object.__setattr__(self, "bottleneck", ((r * r) // (8 * side * side), side, side))
        object.__setattr__(self, "bottleneck", tuple(int(v) for v in self.bottleneck))
        c, h, w = self.bottleneck
        if (h, w) != (side, side):
            raise ModelConfigError(f"bottleneck spatial size {(h, w)} must be {(side, side)} after {stages} stages")
        if c * h * w * 8 != r * r:
            raise ModelConfigError(
                f"bottleneck {self.bottleneck} holds {c * h * w} values; an 8x code at R={r} needs {r * r // 8}")

    @property
    def latent_size(self) -> int:
        c, h, w = self.bottleneck
        return c * h * w

    def checkpoint_fields(self) -> dict:
        return {"resolution": self.resolution, "channels": list(self.channels),
                "bottleneck": list(self.bottleneck), "convs_per_stage": self.convs_per_stage,
                "encoder_slope": self.encoder_slope, "decoder_slope": self.decoder_slope}


@dataclass
class LatentCode:
    values: np.ndarray  # (c, h, w)
    resolution: int


class Compressor(_Model):
    """Skip-free autoencoder; the decoder sees only the latent code."""

    prefix = "compressor"

    def __init__(self, config: CompressorConfig = CompressorConfig(), seed: int | None = 0):
        self.config = config
        rng = None if seed is None else np.random.default_rng(seed)
        ch = config.channels
        es, ds = config.encoder_slope, config.decoder_slope
        bc = config.bottleneck[0]
        enc = []
        for s, c in enumerate(ch):
            cin = 1 if s == 0 else ch[s - 1]
            enc.append(_layer(f"down{s}", cin, c, 4, 2, 1, rng, es, config.init))
            enc += [_layer(f"conv{s}_{k}", c, c, 3, 1, 1, rng, es, config.init)
                    for k in range(config.convs_per_stage)]
        enc.append(_layer("latent", ch[-1], bc, 3, 1, 1, rng, None, config.init))
        dec = [_layer("expand", bc, ch[-1], 3, 1, 1, rng, ds, config.init)]
        for s in reversed(range(len(ch))):
            cout = ch[s - 1] if s > 0 else ch[0]
            dec.append(_layer(f"up{s}", ch[s], cout, 4, 2, 1, rng, ds, config.init, transposed=True))
            dec += [_layer(f"conv{s}_{k}", cout, cout, 3, 1, 1, rng, ds, config.init)
                    for k in range(config.convs_per_stage)]
        dec.append(_layer("out", ch[0], 1, 3, 1, 1, rng, None, config.init))
        self.blocks = {"encoder": Sequential(enc), "decoder": Sequential(dec)}

    def _encode(self, x, keep):
        self._check_input(x)
        return self.blocks["encoder"].forward(x.reshape(len(x), x.shape[2], x.shape[3], 1), keep)

    def _decode(self, z, keep):
        y = self.blocks["decoder"].forward(z, keep)
        return y.reshape(len(y), 1, y.shape[1], y.shape[2])

    def encode(self, x) -> np.ndarray:
        """``(N, 1, R, R)`` fields to ``(N, c, h, w)`` codes."""
        return np.ascontiguousarray(self._encode(np.asarray(x, dtype=DTYPE), False).transpose(0, 3, 1, 2))

    def decode(self, z) -> np.ndarray:
        """``(N, c, h, w)`` codes to ``(N, 1, R, R)`` fields, from the code alone."""
        z = np.asarray(z, dtype=DTYPE)
        if z.ndim != 4 or z.shape[1:] != self.config.bottleneck:
            raise ModelConfigError(f"expected code (N, {', '.join(map(str, self.config.bottleneck))}), got {z.shape}")
        return self._decode(np.ascontiguousarray(z.transpose(0, 2, 3, 1)), False)

    def forward(self, x, keep=True):
        return self._decode(self._encode(x, keep), keep)

    def backward(self, g):
        g = self.blocks["decoder"].backward(g.reshape(len(g), g.shape[2], g.shape[3], 1))
        self.blocks["encoder"].backward(g, need_input_grad=False)


def compressor_encode(model: Compressor, sdf: np.ndarray) -> LatentCode:
    x = np.asarray(sdf, dtype=DTYPE)[None, None]
    return LatentCode(model.encode(x)[0], model.config.resolution)


def compressor_decode(model: Compressor, code: LatentCode) -> np.ndarray:
    if code.resolution != model.config.resolution:
        raise ModelConfigError(f"code was made at R={code.resolution}, model expects R={model.config.resolution}")
    return model.decode(np.asarray(code.values, dtype=DTYPE)[None])[0, 0]


def processor_forward(model: Processor, image: np.ndarray) -> np.ndarray:
    return model.predict(np.asarray(image, dtype=DTYPE)[None, None])[0, 0]


class ExactOracle:
    """Parameter-free stand-in that returns the exact distance-transform field.

    Used as a perfect-predictor fixture for the evaluation path.
    """

    prefix = "oracle"

    def __init__(self, resolution: int):
        self.resolution = resolution

    def predict(self, x, batch_size: int = 32) -> np.ndarray:
        out = np.zeros(np.shape(x), dtype=DTYPE)
        for i, img in enumerate(np.asarray(x)):
            try:
                out[i, 0] = signed_distance_field(img[0] > 0.5)
            except DegenerateFieldError:
                pass
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {"oracle.config.resolution": np.asarray(self.resolution, dtype=np.float32)}


class EncodedPipeline:
    """Frozen processor followed by the compressor round trip."""

    def __init__(self, processor: Processor, compressor: Compressor):
        self.processor = processor
        self.compressor = compressor

    def predict(self, x, batch_size: int = 32) -> np.ndarray:
        return self.compressor.predict(self.processor.predict(x, batch_size), batch_size)


# ---------------------------------------------------------------------------
# checkpoints holding models
# ---------------------------------------------------------------------------

def _config_from(tensors, prefix):
    fields = {}
    for name, arr in tensors.items():
        if name.startswith(f"{prefix}.config."):
            key = name[len(prefix) + 8:]
            fields[key] = arr.tolist()
    return fields


def processor_from_checkpoint(tensors) -> Processor:
    f = _config_from(tensors, "processor")
    cfg = ProcessorConfig(resolution=int(f["resolution"]), channels=tuple(int(c) for c in f["channels"]),
                          skips=bool(f["skips"]), convs_per_stage=int(f["convs_per_stage"]),
                          encoder_slope=float(np.float32(f["encoder_slope"])),
                          decoder_slope=float(np.float32(f["decoder_slope"])))
    model = Processor(cfg, seed=None)
    model.load_parameters(tensors)
    return model


def compressor_from_checkpoint(tensors) -> Compressor:
    f = _config_from(tensors, "compressor")
    cfg = CompressorConfig(resolution=int(f["resolution"]), channels=tuple(int(c) for c in f["channels"]),
                           bottleneck=tuple(int(c) for c in f["bottleneck"]),
                           convs_per_stage=int(f["convs_per_stage"]),
                           encoder_slope=float(np.float32(f["encoder_slope"])),
                           decoder_slope=float(np.float32(f["decoder_slope"])))
    model = Compressor(cfg, seed=None)
    model.load_parameters(tensors)
    return model


def models_from_checkpoint(tensors: dict[str, np.ndarray]) -> dict[str, object]:
    """Rebuild every model stored in a checkpoint, keyed ``processor``/``compressor``/``oracle``."""
    out: dict[str, object] = {}
    if "oracle.config.resolution" in tensors:
        out["oracle"] = ExactOracle(int(tensors["oracle.config.resolution"]))
    if "processor.config.resolution" in tensors:
        out["processor"] = processor_from_checkpoint(tensors)
    if "compressor.config.resolution" in tensors:
        comp = compressor_from_checkpoint(tensors)
        out["compressor"] = EncodedPipeline(out["processor"], comp) if "processor" in out else comp
    if not out:
        raise ModelConfigError("checkpoint holds no recognised model")
    return out


def checkpoint_resolution(tensors: dict[str, np.ndarray]) -> int:
    for prefix in ("processor", "compressor", "oracle"):
        key = f"{prefix}.config.resolution"
        if key in tensors:
            return int(tensors[key])
    raise ModelConfigError("checkpoint holds no recognised model")


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    lr_factor: float = 0.5
    lr_patience: int = 10
    lr_threshold: float = 0.01
    lr_floor: float = 1e-5


@dataclass
class EpochRecord:
    epoch: int
    train_l1: float
    val_l1: float
    lr: float


def fit(model, x, y, val_x=None, val_y=None, config: TrainConfig = TrainConfig(), callback=None) -> list[EpochRecord]:
    """Minibatch MAE training with Adam and a plateau learning-rate schedule.

    Deterministic for a given ``config.seed``.  ``val_l1`` is NaN without a
    validation set, and the schedule then watches the training loss.
    """
    n = len(x)
    if n == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    grads = model.gradients()
    state = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
    sched = PlateauSchedule(config.lr_factor, config.lr_patience, config.lr_threshold, config.lr_floor)
    history: list[EpochRecord] = []
    last_good = {k: v.copy() for k, v in params.items()}
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            pred = model.forward(x[idx])
            loss, g = mae_loss(pred, y[idx])
            if math.isfinite(loss):
                model.backward(g)
            try:
                if not math.isfinite(loss):
                    raise NonFiniteGradientError("non-finite loss")
                adam_step(params, grads, state)
            except NonFiniteGradientError as exc:
                model.load_parameters(last_good)
                raise TrainingDiverged(f"epoch {epoch}: {exc}", model.state_dict(), history) from exc
            total += loss * len(idx)
        train_l1 = total / n
        val_l1 = float("nan")
        if val_x is not None and len(val_x):
            val_l1 = evaluate_metrics(model.predict(val_x, config.batch_size), val_y).l1
        history.append(EpochRecord(epoch, train_l1, val_l1, state.lr))
        log.info("epoch %d train_l1 %.6g val_l1 %.6g lr %.3g", epoch, train_l1, val_l1, state.lr)
        last_good = {k: v.copy() for k, v in params.items()}
        if callback is not None:
            callback(history[-1])
        state.lr = sched.step(train_l1 if math.isnan(val_l1) else val_l1, state.lr)
    return history


def grids_to_batch(grids) -> np.ndarray:
    return np.asarray(grids, dtype=DTYPE)[:, None]


def train_processor(images, sdfs, val_images=None, val_sdfs=None,
                    model_config: ProcessorConfig | None = None,
                    config: TrainConfig = TrainConfig(), callback=None):
    """Train a processor from binary images to fields; returns ``(model, history)``."""
    images = grids_to_batch(images)
    model_config = model_config or ProcessorConfig(resolution=images.shape[-1])
    model = Processor(model_config, seed=config.seed)
    vx = grids_to_batch(val_images) if val_images is not None else None
    vy = grids_to_batch(val_sdfs) if val_sdfs is not None else None
    history = fit(model, images, grids_to_batch(sdfs), vx, vy, config, callback)
    return model, history


def train_compressor(processor: Processor, images, sdfs, val_images=None, val_sdfs=None,
                     model_config: CompressorConfig | None = None,
                     config: TrainConfig = TrainConfig(), ground_truth_input: bool = False, callback=None):
    """Train a compressor on the frozen processor's outputs; returns ``(model, history)``.

    Targets are the ground-truth fields.  Raises if the processor's weights
    changed during training.
    """
    before = tensor_digest(processor.parameters())
    images = grids_to_batch(images)
    targets = grids_to_batch(sdfs)
    x = targets.copy() if ground_truth_input else processor.predict(images, config.batch_size)
    vx = vy = None
    if val_images is not None:
        vy = grids_to_batch(val_sdfs)
        vx = vy.copy() if ground_truth_input else processor.predict(grids_to_batch(val_images), config.batch_size)
    model_config = model_config or CompressorConfig(resolution=images.shape[-1])
    model = Compressor(model_config, seed=config.seed)
    history = fit(model, x, targets, vx, vy, config, callback)
    if tensor_digest(processor.parameters()) != before:
        raise RuntimeError("processor weights changed while training the compressor")
    return model, history


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    l1: float
    l2: float
    linf: float
    samples: int

    def ordered(self) -> bool:
        """``l1**2 <= l2 <= linf**2``, with a little float slack."""
        tol = 1e-12
        return self.l1 ** 2 <= self.l2 * (1 + 1e-9) + tol and self.l2 <= self.linf ** 2 * (1 + 1e-9) + tol


def evaluate_metrics(pred, target) -> MetricsReport:
    """L1 (mean |err|), L2 (mean err^2) and Linf (max |err|) pooled over every cell."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ")
    err = pred.astype(np.float64) - target.astype(np.float64)
    a = np.abs(err)
    return MetricsReport(float(a.mean()), float((err * err).mean()), float(a.max()), int(len(pred)))


def sign_agreement(pred, images) -> float:
    """Fraction of cells whose predicted sign matches occupancy (negative = occupied)."""
    pred = np.asarray(pred)
    occ = np.asarray(images).reshape(pred.shape) > 0.5
    return float(np.mean((pred < 0) == occ))


def metrics_dict(model_name: str, report: MetricsReport) -> dict:
    return {"model": model_name, **{k: v for k, v in asdict(report).items()}}
