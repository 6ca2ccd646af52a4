"""GlyphNet-style separable-convolution classifier and its training recipe.

The recipe: class-weighted categorical cross-entropy, Adam, a learning rate
halved every ``lr_halving_period_epochs`` epochs, and early stopping as soon
as the monitored loss improves by less than ``early_stop_min_delta`` between
consecutive epochs.
"""

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from hieronst.augmentation import resize
from hieronst.curation import derive_seed, parse_gardiner_code
from hieronst.imageio import as_rgb, load_image

log = logging.getLogger(__name__)

PARAM_WINDOW = (4.0e5, 6.0e5)
REFERENCE_PARAMS = 498_856


class LabelSpaceError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    input_size: tuple = (100, 100, 3)
    num_classes: int = 34
    entry_widths: tuple = (64, 64)
    block_widths: tuple = (128, 256, 256)
    final_width: int = 656
    dropout: float = 0.15

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(self.input_size))
        object.__setattr__(self, "entry_widths", tuple(self.entry_widths))
        object.__setattr__(self, "block_widths", tuple(self.block_widths))
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")


class SeparableConv2d(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.depthwise = nn.Conv2d(in_ch, in_ch, 3, padding=1, groups=in_ch, bias=False)
        self.pointwise = nn.Conv2d(in_ch, out_ch, 1, bias=False)

    def forward(self, x):
        return self.pointwise(self.depthwise(x))


def _unit(conv, out_ch):
    return [conv, nn.BatchNorm2d(out_ch), nn.ReLU(inplace=True)]


class GlyphNet(nn.Module):
    """Entry convolutions, separable-conv blocks with max-pooling, and a
    global-average-pooled softmax head."""

    def __init__(self, spec, classes=None):
        super().__init__()
        self.spec = spec
        self.classes = [str(parse_gardiner_code(c)) for c in classes] if classes is not None else None
        if self.classes is not None and len(self.classes) != spec.num_classes:
            raise ValueError(f"{len(self.classes)} class names for {spec.num_classes} outputs")
        layers = []
        in_ch = spec.input_size[2]
        for i, width in enumerate(spec.entry_widths):
            layers += _unit(nn.Conv2d(in_ch, width, 3, stride=2 if i == 0 else 1, padding=1, bias=False), width)
            in_ch = width
        layers.append(nn.MaxPool2d(3, stride=2, padding=1))
        for width in spec.block_widths:
            layers += _unit(SeparableConv2d(in_ch, width), width)
            layers += _unit(SeparableConv2d(width, width), width)
            layers.append(nn.MaxPool2d(3, stride=2, padding=1))
            in_ch = width
        layers += _unit(SeparableConv2d(in_ch, spec.final_width), spec.final_width)
        self.features = nn.Sequential(*layers)
        self.head = nn.Sequential(
            nn.AdaptiveAvgPool2d(1), nn.Flatten(), nn.Dropout(spec.dropout),
            nn.Linear(spec.final_width, spec.num_classes),
        )

    def forward(self, x):
        return self.head(self.features(x))

    @property
    def parameter_count(self):
        return sum(p.numel() for p in self.parameters())

    @property
    def layer_count(self):
        """Conv / separable-conv / batch-norm / pooling / dropout / dense layers."""
        kinds = (nn.Conv2d, SeparableConv2d, nn.BatchNorm2d, nn.MaxPool2d,
                 nn.AdaptiveAvgPool2d, nn.Dropout, nn.Linear)
        inside_sep = {id(m) for s in self.modules() if isinstance(s, SeparableConv2d) for m in s.children()}
        return sum(1 for m in self.modules() if isinstance(m, kinds) and id(m) not in inside_sep)


def build_model(spec=None, seed=0, classes=None):
    spec = spec or ModelSpec(num_classes=len(classes) if classes is not None else 34)
    torch.manual_seed(seed)
    model = GlyphNet(spec, classes)
    n = model.parameter_count
    lo, hi = PARAM_WINDOW
    if spec.num_classes == 34 and not lo <= n <= hi:
        log.warning("parameter count %d outside target window [%d, %d]", n, lo, hi)
    return model


def class_weights(manifest):
    """N / (K * n_c) for every class present in ``manifest``."""
    dist = {c: n for c, n in manifest.distribution.items() if n > 0}
    if not dist:
        raise ValueError("cannot weight an empty manifest")
    total, k = sum(dist.values()), len(dist)
    return {c: total / (k * n) for c, n in dist.items()}


def lr_at_epoch(initial_lr, period, epoch):
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return initial_lr * 0.5 ** (epoch // period)


def should_stop(history, min_delta):
    """True once the latest epoch improved the loss by less than ``min_delta``."""
    if not history:
        raise ValueError("history is empty")
    return len(history) >= 2 and (history[-2] - history[-1]) < min_delta


@dataclass
class TrainConfig:
    initial_lr: float = 0.001
    lr_halving_period_epochs: int = 2
    early_stop_min_delta: float = 0.05
    max_epochs: int = 100
    batch_size: int = 32
    class_weighting: bool = True
    seed: int = 0
    monitored_loss: str = "val"
    recalibrate_bn: bool = True  # re-estimate batch-norm statistics after every epoch

    def __post_init__(self):
        if self.initial_lr <= 0:
            raise ValueError("initial_lr must be > 0")
        if self.lr_halving_period_epochs < 1:
            raise ValueError("lr_halving_period_epochs must be >= 1")
        if self.early_stop_min_delta < 0:
            raise ValueError("early_stop_min_delta must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be >= 1")
        if self.monitored_loss not in ("train", "val"):
            raise ValueError("monitored_loss must be 'train' or 'val'")


HISTORY_FIELDS = ("epoch", "lr", "train_loss", "train_acc", "val_loss", "val_acc")


@dataclass
class TrainingHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [r[name] for r in self.records]

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for r in self.records:
            w.writerow([r["epoch"]] + [repr(float(r[k])) for k in HISTORY_FIELDS[1:]])
        return buf.getvalue()

    def save_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv(), encoding="utf-8")
        return path

    @classmethod
    def from_csv(cls, path):
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls([{k: (int(r[k]) if k == "epoch" else float(r[k])) for k in HISTORY_FIELDS} for r in rows])


def prepare_image(image, spec):
    h, w, _ = spec.input_size
    return resize(as_rgb(image), (h, w))


def load_batch(paths, spec, cache=None):
    """Decode, channel-replicate and resize images into an (N, 3, H, W) tensor."""
    arrays = []
    for p in paths:
        key = str(p)
        if cache is not None and key in cache:
            arr = cache[key]
        else:
            arr = prepare_image(load_image(p), spec)
            if cache is not None:
                cache[key] = arr
        arrays.append(arr)
    if not arrays:
        h, w, c = spec.input_size
        return torch.empty((0, c, h, w))
    return torch.from_numpy(np.stack(arrays).transpose(0, 3, 1, 2).copy())


def _labels(manifest, classes):
    index = {c: i for i, c in enumerate(classes)}
    unknown = sorted({str(r.gardiner) for r in manifest.records if str(r.gardiner) not in index})
    if unknown:
        raise LabelSpaceError(f"classes {unknown} are not in the model's output layer")
    return torch.tensor([index[str(r.gardiner)] for r in manifest.records], dtype=torch.long)


def weighted_cross_entropy(logits, targets, weights=None):
    """Mean over samples of per-sample CE scaled by its class weight."""
    per_sample = F.cross_entropy(logits, targets, reduction="none")
    if weights is not None:
        per_sample = per_sample * weights[targets]
    return per_sample.mean()


def recalibrate_batchnorm(model, x, batch_size):
    """Replace batch-norm running statistics by their average over ``x``.

    With only a few optimiser steps per epoch the exponential running
    averages lag far behind the weights, and eval-mode predictions collapse.
    """
    bns = [m for m in model.modules() if isinstance(m, nn.modules.batchnorm._BatchNorm)]
    momenta = [m.momentum for m in bns]
    for m in bns:
        m.reset_running_stats()
        m.momentum = None  # cumulative average
    model.train()
    with torch.no_grad():
        for start in range(0, len(x), batch_size):
            xb = x[start:start + batch_size]
            if len(xb) > 1:
                model(xb)
    for m, momentum in zip(bns, momenta):
        m.momentum = momentum


def _evaluate_loss(model, x, y, batch_size):
    model.eval()
    total, correct = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(y), batch_size):
            logits = model(x[start:start + batch_size])
            yy = y[start:start + batch_size]
            total += F.cross_entropy(logits, yy, reduction="sum").item()
            correct += (logits.argmax(1) == yy).sum().item()
    return total / max(len(y), 1), correct / max(len(y), 1)


def train(model, train_manifest, val_manifest, cfg, checkpoint_path=None, metadata=None):
    """Train ``model`` in place; returns (model, TrainingHistory).

    Data are loaded once into memory. Batches are drawn from a per-epoch
    seeded permutation, so a run is reproducible for a fixed seed.
    """
    if model.classes is None:
        raise LabelSpaceError("model has no class list")
    if len(train_manifest) == 0:
        raise ValueError("empty training manifest")
    spec = model.spec
    cache = {}
    x_train = load_batch([r.path for r in train_manifest], spec, cache)
    y_train = _labels(train_manifest, model.classes)
    x_val = load_batch([r.path for r in val_manifest], spec, cache)
    y_val = _labels(val_manifest, model.classes)

    weights = None
    if cfg.class_weighting:
        cw = class_weights(train_manifest)
        weights = torch.ones(len(model.classes))
        for c, w in cw.items():
            weights[model.classes.index(str(c))] = w

    torch.manual_seed(cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.initial_lr)
    history = TrainingHistory()
    monitored = []
    for epoch in range(cfg.max_epochs):
        lr = lr_at_epoch(cfg.initial_lr, cfg.lr_halving_period_epochs, epoch)
        for group in opt.param_groups:
            group["lr"] = lr
        gen = torch.Generator().manual_seed(derive_seed(cfg.seed, "epoch", epoch))
        order = torch.randperm(len(y_train), generator=gen)
        model.train()
        run_loss, run_correct = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            if len(idx) == 1:
                # batch-norm needs more than one sample per channel in training mode
                continue
            logits = model(xb)
            loss = weighted_cross_entropy(logits, yb, weights)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            run_loss += loss.item() * len(idx)
            run_correct += (logits.argmax(1) == yb).sum().item()
        if cfg.recalibrate_bn:
            recalibrate_batchnorm(model, x_train, cfg.batch_size)
        seen = max(len(order) - (1 if len(order) % cfg.batch_size == 1 else 0), 1)
        train_loss, train_acc = run_loss / seen, run_correct / seen
        if len(y_val):
            val_loss, val_acc = _evaluate_loss(model, x_val, y_val, cfg.batch_size)
        else:
            val_loss, val_acc = float("nan"), float("nan")
        if not math.isfinite(train_loss):
            raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}")
        history.records.append({
            "epoch": epoch, "lr": lr, "train_loss": train_loss, "train_acc": train_acc,
            "val_loss": val_loss, "val_acc": val_acc,
        })
        log.info("epoch %d lr=%.6g loss=%.4f acc=%.3f val_loss=%.4f val_acc=%.3f",
                 epoch, lr, train_loss, train_acc, val_loss, val_acc)
        key = val_loss if cfg.monitored_loss == "val" and len(y_val) else train_loss
        monitored.append(key)
        if should_stop(monitored, cfg.early_stop_min_delta):
            break
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path, history=history, metadata=metadata)
    return model, history


def predict(model, images, batch_size=64):
    """Class-probability rows for a batch of prepared images.

    ``images`` is an (N, 3, H, W) tensor or a sequence of HWC arrays already
    at the model's input size.
    """
    h, w, c = model.spec.input_size
    if isinstance(images, torch.Tensor):
        x = images
    else:
        arrays = [as_rgb(im) for im in images]
        if not arrays:
            return np.zeros((0, model.spec.num_classes))
        x = torch.from_numpy(np.stack(arrays).transpose(0, 3, 1, 2).copy())
    if x.dim() != 4 or tuple(x.shape[1:]) != (c, h, w):
        raise ValueError(f"expected images shaped (N, {c}, {h}, {w}), got {tuple(x.shape)}")
    model.eval()
    out = []
    with torch.no_grad():
        for start in range(0, x.shape[0], batch_size):
            logits = model(x[start:start + batch_size]).double()
            out.append(torch.softmax(logits, dim=1).numpy())
    return np.concatenate(out) if out else np.zeros((0, model.spec.num_classes))


def save_checkpoint(model, path, history=None, metadata=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format": "hieronst-glyphnet/1",
        "spec": asdict(model.spec),
        "classes": model.classes,
        "state_dict": model.state_dict(),
        "history": history.records if history is not None else None,
        "metadata": metadata or {},
    }, path)
    return path


def load_checkpoint(path):
    """Return (model, metadata dict) from a checkpoint written by save_checkpoint."""
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if blob.get("format") != "hieronst-glyphnet/1":
        raise ValueError(f"{path} is not a glyph classifier checkpoint")
    model = GlyphNet(ModelSpec(**blob["spec"]), blob["classes"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    meta = dict(blob.get("metadata") or {})
    meta["history"] = TrainingHistory(blob["history"]) if blob.get("history") is not None else None
    return model, meta
