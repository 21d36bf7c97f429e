"""Encoder / generator / discriminator with fixed shape contracts.

At the reference 64x64 resolution the encoder and generator use four
stride-2 levels (bottleneck 4x4) and the discriminator three (8x8 patch
grid). On smaller probe resolutions the pyramids shrink so the bottleneck
stays 4x4; everything else is unchanged, which keeps gradient-check
configs cheap.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .data import ConditioningMode
from .errors import ConfigurationError, ContractError

LEAKY_SLOPE = 0.2
MAX_CHANNEL_MULT = 8
LABEL_INPUT_CHANNELS = 4


@dataclass
class NetworkConfig:
    latent_dim: int = 8
    base_channels: int = 32
    image_size: int = 64
    cond_channels: int = 3  # image-conditioned; 0 for label-conditioned
    label_dim: int = 0  # label-conditioned; 0 for image-conditioned
    out_channels: int = 1

    def __post_init__(self) -> None:
        if (self.cond_channels == 0) == (self.label_dim == 0):
            raise ConfigurationError("exactly one of cond_channels, label_dim must be nonzero")
        if self.latent_dim < 1:
            raise ConfigurationError("latent_dim must be >= 1")
        if self.out_channels not in (1, 3):
            raise ConfigurationError("out_channels must be 1 or 3")
        if self.image_size < 8 or self.image_size & (self.image_size - 1):
            raise ConfigurationError("image_size must be a power of two >= 8")

    @property
    def mode(self) -> ConditioningMode:
        return ConditioningMode.IMAGE if self.cond_channels else ConditioningMode.LABEL

    @property
    def num_levels(self) -> int:
        return max(1, min(4, int(math.log2(self.image_size)) - 2))

    @property
    def num_disc_levels(self) -> int:
        return max(1, min(3, int(math.log2(self.image_size)) - 2))


def _orthogonal(shape: tuple[int, ...], g: torch.Generator) -> Tensor:
    rows = shape[0]
    cols = int(torch.tensor(shape[1:]).prod()) if len(shape) > 1 else 1
    flat = torch.randn(max(rows, cols), min(rows, cols), generator=g)
    q, r = torch.linalg.qr(flat)
    q = q * torch.sign(torch.diagonal(r)).unsqueeze(0)
    if rows < cols:
        q = q.t()
    return q[:rows, :cols].reshape(shape).contiguous()


def init_parameters(module: nn.Module, seed: int) -> None:
    """Orthogonal weights, zero biases; deterministic in traversal order."""
    g = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            with torch.no_grad():
                m.weight.copy_(_orthogonal(tuple(m.weight.shape), g))
                if m.bias is not None:
                    m.bias.zero_()


def _channel_plan(base: int, levels: int) -> list[int]:
    return [min(base * 2**i, base * MAX_CHANNEL_MULT) for i in range(levels)]


class Encoder(nn.Module):
    """Stride-2 conv pyramid with parallel mu / logvar heads."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        chans = _channel_plan(cfg.base_channels, cfg.num_levels)
        layers: list[nn.Module] = []
        c_in = cfg.out_channels
        for c_out in chans:
            layers += [nn.Conv2d(c_in, c_out, 4, 2, 1), nn.LeakyReLU(LEAKY_SLOPE)]
            c_in = c_out
        self.body = nn.Sequential(*layers)
        bottleneck = cfg.image_size // 2**cfg.num_levels
        feat = c_in * bottleneck * bottleneck
        self.mu_head = nn.Linear(feat, cfg.latent_dim)
        self.logvar_head = nn.Linear(feat, cfg.latent_dim)

    def forward(self, image: Tensor) -> tuple[Tensor, Tensor]:
        if image.shape[1:] != (self.cfg.out_channels, self.cfg.image_size, self.cfg.image_size):
            raise ContractError(f"encoder input shape {tuple(image.shape)} violates config")
        h = self.body(image).flatten(1)
        return self.mu_head(h), self.logvar_head(h)


class Generator(nn.Module):
    """U-Net with skip connections.

    Image mode: the latent code is tiled spatially and concatenated to the
    conditional image at the input. Label mode: the input is a learned
    constant tensor and (label, z) are broadcast-concatenated at the
    bottleneck.
    """

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        chans = _channel_plan(cfg.base_channels, cfg.num_levels)
        if cfg.mode is ConditioningMode.IMAGE:
            c_in = cfg.cond_channels + cfg.latent_dim
            bottleneck_extra = 0
        else:
            c_in = LABEL_INPUT_CHANNELS
            self.const_input = nn.Parameter(
                torch.zeros(LABEL_INPUT_CHANNELS, cfg.image_size, cfg.image_size)
            )
            bottleneck_extra = cfg.label_dim + cfg.latent_dim
        self.down = nn.ModuleList()
        for c_out in chans:
            self.down.append(nn.Conv2d(c_in, c_out, 4, 2, 1))
            c_in = c_out
        self.up = nn.ModuleList()
        c_in = chans[-1] + bottleneck_extra
        for i in range(len(chans) - 1, 0, -1):
            self.up.append(nn.ConvTranspose2d(c_in, chans[i - 1], 4, 2, 1))
            c_in = chans[i - 1] * 2  # skip concat
        self.up.append(nn.ConvTranspose2d(c_in, cfg.out_channels, 4, 2, 1))

    def forward(self, condition: Tensor, z: Tensor) -> Tensor:
        cfg = self.cfg
        s = cfg.image_size
        if z.shape[-1] != cfg.latent_dim:
            raise ContractError("latent code length mismatch")
        if cfg.mode is ConditioningMode.IMAGE:
            if condition.dim() != 4 or condition.shape[1] != cfg.cond_channels:
                raise ContractError("expected an image condition")
            zt = z[:, :, None, None].expand(-1, -1, s, s)
            x = torch.cat([condition, zt], dim=1)
        else:
            if condition.dim() != 2 or condition.shape[1] != cfg.label_dim:
                raise ContractError("expected a one-hot label condition")
            x = self.const_input.unsqueeze(0).expand(condition.shape[0], -1, -1, -1)
        skips = []
        for conv in self.down:
            x = F.leaky_relu(conv(x), LEAKY_SLOPE)
            skips.append(x)
        if cfg.mode is ConditioningMode.LABEL:
            code = torch.cat([condition, z], dim=1)
            b = x.shape[-1]
            x = torch.cat([x, code[:, :, None, None].expand(-1, -1, b, b)], dim=1)
        for i, deconv in enumerate(self.up):
            x = deconv(x)
            if i < len(self.up) - 1:
                x = F.relu(torch.cat([x, skips[len(self.up) - 2 - i]], dim=1))
        return torch.tanh(x)


class Discriminator(nn.Module):
    """Patch-level least-squares critic; condition is channel-concatenated
    (labels are first broadcast to a spatial map)."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        chans = _channel_plan(cfg.base_channels, cfg.num_disc_levels)
        layers: list[nn.Module] = []
        c_in = cfg.out_channels + (cfg.cond_channels or cfg.label_dim)
        for c_out in chans:
            layers += [nn.Conv2d(c_in, c_out, 4, 2, 1), nn.LeakyReLU(LEAKY_SLOPE)]
            c_in = c_out
        layers.append(nn.Conv2d(c_in, 1, 1))
        self.body = nn.Sequential(*layers)

    def forward(self, condition: Tensor, image: Tensor) -> Tensor:
        cfg = self.cfg
        if image.shape[1:] != (cfg.out_channels, cfg.image_size, cfg.image_size):
            raise ContractError(f"discriminator image shape {tuple(image.shape)} violates config")
        if cfg.mode is ConditioningMode.IMAGE:
            cond_map = condition
        else:
            if condition.dim() != 2 or condition.shape[1] != cfg.label_dim:
                raise ContractError("expected a one-hot label condition")
            cond_map = condition[:, :, None, None].expand(-1, -1, cfg.image_size, cfg.image_size)
        if cond_map.shape[-2:] != image.shape[-2:]:
            raise ContractError("condition/image spatial mismatch")
        return self.body(torch.cat([cond_map, image], dim=1))


@dataclass
class ModelTriple:
    """Encoder, generator and discriminator for one task stage."""

    encoder: Encoder
    generator: Generator
    discriminator: Discriminator
    config: NetworkConfig
    frozen: bool = False

    def eg_parameters(self) -> list[nn.Parameter]:
        return list(self.encoder.parameters()) + list(self.generator.parameters())

    def d_parameters(self) -> list[nn.Parameter]:
        return list(self.discriminator.parameters())

    def named_tensors(self) -> dict[str, Tensor]:
        out = {}
        for mod_name, mod in (
            ("encoder", self.encoder),
            ("generator", self.generator),
            ("discriminator", self.discriminator),
        ):
            for name, p in mod.state_dict().items():
                out[f"{mod_name}/{name}"] = p
        return out

    def load_named_tensors(self, tensors: dict[str, Tensor]) -> None:
        for mod_name, mod in (
            ("encoder", self.encoder),
            ("generator", self.generator),
            ("discriminator", self.discriminator),
        ):
            state = {
                k.split("/", 1)[1]: v for k, v in tensors.items() if k.startswith(mod_name + "/")
            }
            mod.load_state_dict(state)


def build_model(cfg: NetworkConfig, seed: int = 0) -> ModelTriple:
    encoder = Encoder(cfg)
    generator = Generator(cfg)
    discriminator = Discriminator(cfg)
    init_parameters(encoder, seed)
    init_parameters(generator, seed + 1)
    init_parameters(discriminator, seed + 2)
    return ModelTriple(encoder, generator, discriminator, cfg)


def reparameterize(mu: Tensor, logvar: Tensor, noise: Tensor) -> Tensor:
    """mu + exp(logvar / 2) * noise, elementwise."""
    if mu.shape != logvar.shape or mu.shape != noise.shape:
        raise ContractError("reparameterize operands must share shape")
    return mu + torch.exp(0.5 * logvar) * noise


def clone_frozen(model: ModelTriple) -> ModelTriple:
    """Deep copy with gradients disabled; used for teacher snapshots."""
    snap = copy.deepcopy(model)
    for p in snap.eg_parameters() + snap.d_parameters():
        p.requires_grad_(False)
    snap.frozen = True
    return snap
