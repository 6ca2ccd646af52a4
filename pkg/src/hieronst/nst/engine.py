"""Gatys-style neural style transfer on a frozen VGG19 backbone.

The image being optimised starts from the (resized) content image and is
updated with Adam; pixels are clipped to [0, 1] after every step. The loss is

    content_weight * mean_l MSE(F_l(x), F_l(content))
  + style_weight   * mean_l MSE(G_l(x), G_l(style))
  + tv_weight      * TV(x)

with G_l the Gram matrix of layer l normalised by its number of locations.
"""

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from hieronst import kernels
from hieronst.imageio import as_rgb
from hieronst.nst.backbone import LayerConfigError

log = logging.getLogger(__name__)

DEFAULT_CONTENT_LAYERS = ("block5_conv2",)
DEFAULT_STYLE_LAYERS = tuple(f"block{b}_conv1" for b in range(1, 6))


class NSTDivergedError(RuntimeError):
    def __init__(self, step, value):
        super().__init__(f"style transfer diverged at step {step} (loss={value})")
        self.step = step


@dataclass
class NSTConfig:
    content_layers: tuple = DEFAULT_CONTENT_LAYERS
    style_layers: tuple = DEFAULT_STYLE_LAYERS
    style_weight: float = 1e-2
    content_weight: float = 1e4
    tv_weight: float = 30.0
    steps: int = 1000
    step_size: float = 0.02
    max_dim: int = 512
    seed: int = 0
    # Adam moments as in the reference notebook
    beta1: float = 0.99
    beta2: float = 0.999
    eps: float = 1e-1
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.content_layers = tuple(self.content_layers)
        self.style_layers = tuple(self.style_layers)

    def validate(self):
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.max_dim < 32:
            raise ValueError(f"max_dim must be >= 32, got {self.max_dim}")
        if min(self.style_weight, self.content_weight, self.tv_weight) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if not self.content_layers or not self.style_layers:
            raise LayerConfigError("content and style layer lists must be non-empty")
        return self

    def to_dict(self):
        d = asdict(self)
        d.pop("extra")
        d["content_layers"] = list(self.content_layers)
        d["style_layers"] = list(self.style_layers)
        return d


def _to_batch(image):
    """numpy HWC image -> (1, 3, H, W) float tensor."""
    if isinstance(image, torch.Tensor):
        return image if image.dim() == 4 else image.unsqueeze(0)
    arr = as_rgb(image)
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1))).unsqueeze(0)


def _to_image(batch):
    return batch.detach()[0].permute(1, 2, 0).contiguous().numpy().astype(np.float32)


def extract_features(backbone, image, layer_names):
    """Activations of ``layer_names`` for one image, each shaped (C, H, W)."""
    feats = backbone(_to_batch(image), backbone.check_layers(layer_names))
    return {name: f[0] for name, f in feats.items()}


def gram_matrix(fm):
    """Channel Gram matrix of a (C, H, W) activation, divided by H*W."""
    as_numpy = isinstance(fm, np.ndarray)
    t = torch.as_tensor(fm)
    if t.dim() == 4:
        t = t[0]
    if t.dim() != 3 or t.numel() == 0:
        raise ValueError(f"expected a non-empty (C, H, W) tensor, got shape {tuple(t.shape)}")
    c = t.shape[0]
    flat = t.reshape(c, -1)
    g = flat @ flat.T / flat.shape[1]
    return g.numpy() if as_numpy else g


def loss_terms(current, content_targets, style_targets, cfg):
    """Unweighted (content error, style error), each averaged over its layers."""
    if set(content_targets) != set(cfg.content_layers):
        raise ValueError(f"content targets {sorted(content_targets)} != {list(cfg.content_layers)}")
    if set(style_targets) != set(cfg.style_layers):
        raise ValueError(f"style targets {sorted(style_targets)} != {list(cfg.style_layers)}")
    missing = [n for n in (*cfg.content_layers, *cfg.style_layers) if n not in current]
    if missing:
        raise ValueError(f"current features lack layers {missing}")
    content = sum(torch.mean((current[n] - content_targets[n]) ** 2) for n in cfg.content_layers)
    style = sum(torch.mean((gram_matrix(current[n]) - style_targets[n]) ** 2) for n in cfg.style_layers)
    return content / len(cfg.content_layers), style / len(cfg.style_layers)


def nst_loss(current, content_targets, style_targets, cfg):
    content, style = loss_terms(current, content_targets, style_targets, cfg)
    return cfg.content_weight * content + cfg.style_weight * style


def total_variation(image):
    """Sum of absolute vertical and horizontal neighbour differences."""
    if isinstance(image, torch.Tensor):
        t = image if image.dim() == 4 else image.unsqueeze(0)
        return (t[:, :, 1:, :] - t[:, :, :-1, :]).abs().sum() + (t[:, :, :, 1:] - t[:, :, :, :-1]).abs().sum()
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    return float(np.abs(np.diff(a, axis=0)).sum() + np.abs(np.diff(a, axis=1)).sum())


def fit_max_dim(image, max_dim):
    """Resize so the longest side equals ``max_dim``, keeping aspect ratio."""
    img = as_rgb(image)
    h, w, _ = img.shape
    scale = max_dim / max(h, w)
    nh, nw = max(1, int(h * scale)), max(1, int(w * scale))
    if (nh, nw) == (h, w):
        return img.copy()
    return kernels.resize_bilinear(img, nh, nw)


class StyleTransfer:
    """Runs style transfer jobs against one backbone and configuration.

    Style Gram targets are cached per ``style_key``. With ``fresh_init=False``
    the optimised image and Adam state are carried over from the previous
    call, the variable-reuse behaviour that leaves faint outlines of earlier
    glyphs in later outputs; it exists only to study that defect.
    """

    def __init__(self, backbone, cfg):
        self.backbone = backbone
        self.cfg = cfg.validate()
        backbone.check_layers(cfg.content_layers)
        backbone.check_layers(cfg.style_layers)
        self._style_cache = {}
        self._variable = None
        self._optimizer = None

    @property
    def layers(self):
        return list(dict.fromkeys((*self.cfg.content_layers, *self.cfg.style_layers)))

    def style_targets(self, style, style_key=None):
        if style_key is not None and style_key in self._style_cache:
            return self._style_cache[style_key]
        img = fit_max_dim(style, self.cfg.max_dim)
        with torch.no_grad():
            feats = extract_features(self.backbone, img, self.cfg.style_layers)
            targets = {n: gram_matrix(feats[n]) for n in self.cfg.style_layers}
        if style_key is not None:
            self._style_cache[style_key] = targets
        return targets

    def total_loss(self, x, content_targets, style_targets):
        feats = self.backbone(x, self.layers)
        feats = {n: f[0] for n, f in feats.items()}
        loss = nst_loss(feats, content_targets, style_targets, self.cfg)
        return loss + self.cfg.tv_weight * total_variation(x)

    def run(self, content, style, style_key=None, fresh_init=True, trace=None, seed=None):
        """Stylise ``content`` with ``style`` and return the HWC image.

        ``trace``, when given, receives the total loss before every step and
        once more for the final image (``steps + 1`` values).
        """
        cfg = self.cfg
        torch.manual_seed(cfg.seed if seed is None else seed)
        content_img = fit_max_dim(content, cfg.max_dim)
        if cfg.steps == 0:
            if trace is not None:
                trace.append(float(self._evaluate(content_img, style, style_key)))
            return content_img
        style_targets = self.style_targets(style, style_key)
        content_batch = _to_batch(content_img)
        with torch.no_grad():
            content_targets = {
                n: f[0] for n, f in self.backbone(content_batch, cfg.content_layers).items()
            }
        reuse = (
            not fresh_init
            and self._variable is not None
            and self._variable.shape == content_batch.shape
        )
        if not reuse:
            self._variable = content_batch.clone().requires_grad_(True)
            self._optimizer = torch.optim.Adam(
                [self._variable], lr=cfg.step_size, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps
            )
        x, opt = self._variable, self._optimizer
        for step in range(cfg.steps):
            opt.zero_grad(set_to_none=True)
            loss = self.total_loss(x, content_targets, style_targets)
            value = loss.item()
            if not math.isfinite(value):
                raise NSTDivergedError(step, value)
            if trace is not None:
                trace.append(value)
            loss.backward()
            opt.step()
            with torch.no_grad():
                x.clamp_(0.0, 1.0)
        if trace is not None:
            with torch.no_grad():
                value = self.total_loss(x, content_targets, style_targets).item()
            if not math.isfinite(value):
                raise NSTDivergedError(cfg.steps, value)
            trace.append(value)
        return _to_image(x)

    def _evaluate(self, image, style, style_key):
        style_targets = self.style_targets(style, style_key)
        batch = _to_batch(image)
        with torch.no_grad():
            content_targets = {n: f[0] for n, f in self.backbone(batch, self.cfg.content_layers).items()}
            return self.total_loss(batch, content_targets, style_targets).item()

    def final_terms(self, image, content, style, style_key=None):
        """(content error, style error) of ``image`` against the job's targets."""
        style_targets = self.style_targets(style, style_key)
        with torch.no_grad():
            content_targets = {
                n: f[0]
                for n, f in self.backbone(_to_batch(fit_max_dim(content, self.cfg.max_dim)), self.cfg.content_layers).items()
            }
            feats = {n: f[0] for n, f in self.backbone(_to_batch(image), self.layers).items()}
            c, s = loss_terms(feats, content_targets, style_targets, self.cfg)
        return float(c), float(s)


def synthesize(content, style, cfg, backbone, trace=None):
    """Stylise one content image with one style image (fresh optimisation)."""
    return StyleTransfer(backbone, cfg).run(content, style, trace=trace)
