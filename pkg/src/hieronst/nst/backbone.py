"""VGG19 feature backbone with named layers and checkpoint loading."""

import logging
from pathlib import Path

import torch
from torch import nn

log = logging.getLogger(__name__)

# (block, number of 3x3 convolutions, output channels)
_VGG19_BLOCKS = ((1, 2, 64), (2, 2, 128), (3, 4, 256), (4, 4, 512), (5, 4, 512))

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
CHECKPOINT_FORMAT = "hieronst-vgg19/1"


class BackboneLoadError(OSError):
    pass


class LayerConfigError(ValueError):
    pass


def _layer_plan():
    """Yield (name, module, torchvision feature index) for the VGG19 stack.

    Convolution outputs are taken after their ReLU, so ``block5_conv2`` names
    the rectified activation of the second convolution of block 5.
    """
    idx = 0
    in_ch = 3
    for block, n_conv, out_ch in _VGG19_BLOCKS:
        for k in range(1, n_conv + 1):
            conv = nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1)
            yield f"block{block}_conv{k}", nn.Sequential(conv, nn.ReLU()), idx
            idx += 2
            in_ch = out_ch
        yield f"block{block}_pool", nn.MaxPool2d(2, 2), idx
        idx += 1


LAYER_NAMES = tuple(name for name, _, _ in _layer_plan())


class Backbone(nn.Module):
    """Frozen VGG19 convolutional stack returning named activations.

    ``preprocess`` describes how [0, 1] RGB input is mapped to what the
    weights expect: ``x * scale`` (optionally channel-reversed to BGR), then
    ``(x - mean) / std`` per channel.
    """

    def __init__(self, preprocess=None):
        super().__init__()
        self.layers = nn.ModuleDict()
        self._torchvision_index = {}
        for name, module, idx in _layer_plan():
            self.layers[name] = module
            self._torchvision_index[name] = idx
        pre = dict(preprocess or {"scale": 1.0, "mean": IMAGENET_MEAN, "std": IMAGENET_STD, "bgr": False})
        self.preprocess = pre
        self.register_buffer("_mean", torch.tensor(pre["mean"], dtype=torch.float32).view(1, 3, 1, 1))
        self.register_buffer("_std", torch.tensor(pre["std"], dtype=torch.float32).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    def normalize(self, x):
        x = x * self.preprocess["scale"]
        if self.preprocess.get("bgr"):
            x = x.flip(1)
        return (x - self._mean) / self._std

    def check_layers(self, layer_names):
        names = list(layer_names)
        if not names:
            raise LayerConfigError("layer list is empty")
        unknown = [n for n in names if n not in self.layers]
        if unknown:
            raise LayerConfigError(f"unknown layer(s) {unknown}; known: {list(LAYER_NAMES)}")
        return names

    def forward(self, x, layer_names):
        """Map a (N, 3, H, W) batch in [0, 1] to {layer name: activation}."""
        wanted = set(self.check_layers(layer_names))
        out = {}
        h = self.normalize(x)
        for name, module in self.layers.items():
            h = module(h)
            if name in wanted:
                out[name] = h
                if len(out) == len(wanted):
                    break
        return out

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        state = {k: v for k, v in self.state_dict().items() if not k.startswith("_")}
        torch.save({"format": CHECKPOINT_FORMAT, "preprocess": self.preprocess, "state_dict": state}, path)
        return path

    def _load_torchvision(self, state):
        mapped = {}
        for name, idx in self._torchvision_index.items():
            if "conv" not in name:
                continue
            for part in ("weight", "bias"):
                key = f"features.{idx}.{part}"
                if key not in state:
                    key = f"{idx}.{part}"
                mapped[f"layers.{name}.0.{part}"] = state[key]
        self.load_state_dict(mapped, strict=False)

    @classmethod
    def load(cls, path):
        """Load a backbone checkpoint.

        Accepts this package's own format or a plain torchvision VGG19 state
        dict (``features.N.weight`` keys), which implies ImageNet preprocessing.
        """
        path = Path(path)
        if not path.is_file():
            raise BackboneLoadError(f"backbone weights not found: {path}")
        try:
            blob = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise BackboneLoadError(f"cannot read backbone weights {path}: {exc}") from exc
        try:
            if isinstance(blob, dict) and blob.get("format") == CHECKPOINT_FORMAT:
                model = cls(blob["preprocess"])
                missing, unexpected = model.load_state_dict(blob["state_dict"], strict=False)
                missing = [k for k in missing if not k.startswith("_")]
                if missing or unexpected:
                    raise KeyError(f"missing={missing} unexpected={unexpected}")
            else:
                model = cls()
                model._load_torchvision(blob)
        except (KeyError, RuntimeError, TypeError) as exc:
            raise BackboneLoadError(f"corrupt backbone weights {path}: {exc}") from exc
        model.requires_grad_(False)
        return model.eval()


def _smooth_basis(decay):
    """Orthonormal 3x3 DCT basis and a per-frequency amplitude ~ (1 + u^2 + v^2)^(-decay/2)."""
    k = torch.arange(3, dtype=torch.float64)
    dct = torch.stack([torch.cos(torch.pi * (k + 0.5) * u / 3) for u in range(3)])
    basis, amp = [], []
    for u in range(3):
        for v in range(3):
            b = dct[u][:, None] * dct[v][None, :]
            basis.append(b / b.norm())
            amp.append((1 + u * u + v * v) ** (-decay / 2))
    return torch.stack(basis), torch.tensor(amp, dtype=torch.float64)


def make_surrogate(path, seed=0, decay=2.0):
    """Write a seeded, randomly initialised VGG19 checkpoint to ``path``.

    A stand-in for ImageNet weights when those cannot be obtained. Each 3x3
    kernel is drawn in the DCT basis with amplitudes falling off with spatial
    frequency, so filters are smooth and the Gram statistics describe
    coherent texture instead of pixel noise. Weights are rescaled to the
    fan-in (He) variance and biases are zero; inputs follow the Caffe
    convention (0-255, BGR, mean subtracted).
    """
    gen = torch.Generator().manual_seed(seed)
    model = Backbone({"scale": 255.0, "mean": (103.939, 116.779, 123.68), "std": (1.0, 1.0, 1.0), "bgr": True})
    basis, amp = _smooth_basis(decay)
    for module in model.modules():
        if isinstance(module, nn.Conv2d):
            o, i = module.out_channels, module.in_channels
            coef = torch.randn(o, i, 9, generator=gen, dtype=torch.float64) * amp
            w = torch.einsum("oik,kxy->oixy", coef, basis)
            w = w * (2.0 / w.pow(2).sum(dim=(1, 2, 3)).mean()).sqrt()
            with torch.no_grad():
                module.weight.copy_(w.float())
                module.bias.zero_()
    log.info("writing surrogate backbone (seed %d) to %s", seed, path)
    return model.save(path)
