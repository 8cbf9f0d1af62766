"""Style-transfer core: conv encoder/decoder, style VAE, and the four-term loss.

The encoder is a small 3-stage convolutional pyramid; the style VAE compresses
the deepest layer's channel moments into a latent Gaussian whose samples (the
"style codes") decode back to moments that drive AdaIN. Activations are SiLU
throughout: the stylizer must be smooth in the style code because downstream
training differentiates the segmentation loss through it.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor, nn

from .adain import FeatureMoments, adain, channel_moments
from .config import RainConfig
from .errors import ShapeError


@dataclass
class StyleDistribution:
    """Diagonal Gaussian over the latent style space; psi/xi are (B, latent_dim)."""

    psi: Tensor
    xi: Tensor

    @property
    def latent_dim(self) -> int:
        return self.psi.shape[-1]


def _conv(in_ch: int, out_ch: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.ReflectionPad2d(1),
        nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride),
        nn.SiLU(),
    )


class Encoder(nn.Module):
    """One stride-2 stage per width; forward returns the per-stage feature pyramid.

    Each stage ends with a parameter-free per-sample normalization (GroupNorm
    with a single group, no affine). The encoder is typically frozen at its
    random initialization, and without the normalization the SiLU/conv cascade
    shrinks activations by orders of magnitude per stage — feature moments
    then live at scales where the style losses are numerically negligible.
    Normalizing over (C, H, W) keeps per-channel moment structure intact while
    pinning the overall feature scale at O(1).
    """

    def __init__(self, widths: tuple[int, ...], in_ch: int = 1):
        super().__init__()
        stages = []
        prev = in_ch
        for w in widths:
            stages.append(nn.Sequential(_conv(prev, w, stride=2), _conv(w, w),
                                        nn.GroupNorm(1, w, affine=False)))
            prev = w
        self.stages = nn.ModuleList(stages)
        self.widths = tuple(widths)

    def forward(self, x: Tensor) -> list[Tensor]:
        feats = []
        h = x
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return feats


class Decoder(nn.Module):
    """Mirror of the encoder: nearest-neighbor upsampling, sigmoid output in [0, 1]."""

    def __init__(self, widths: tuple[int, ...], out_ch: int = 1):
        super().__init__()
        ws = list(widths)[::-1]  # deepest first
        blocks = []
        for i, w in enumerate(ws):
            nxt = ws[i + 1] if i + 1 < len(ws) else ws[-1]
            blocks.append(nn.Sequential(
                nn.Upsample(scale_factor=2, mode="nearest"),
                _conv(w, nxt),
            ))
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Sequential(nn.ReflectionPad2d(1), nn.Conv2d(ws[-1], out_ch, 3))

    def forward(self, f: Tensor) -> Tensor:
        h = f
        for b in self.blocks:
            h = b(h)
        return torch.sigmoid(self.head(h))


class StyleVae(nn.Module):
    """Two-layer MLP encoder/decoder over the deepest layer's moment vector.

    encode: (B, 2C) -> (psi, xi) with xi = exp(log-std), floored at eps_std.
    decode: (B, latent) -> (B, 2C) with the std half passed through the same
    exp-plus-floor positivity map.
    """

    LOG_CLAMP = 8.0  # keeps exp() finite under adversarial code drift
    PSI_INIT_GAIN = 8.0  # start the posterior wide; see __init__

    def __init__(self, moment_dim: int, latent_dim: int, hidden: int, eps_std: float):
        super().__init__()
        self.moment_dim = moment_dim
        self.latent_dim = latent_dim
        self.eps_std = eps_std
        self.enc = nn.Sequential(nn.Linear(moment_dim, hidden), nn.SiLU(),
                                 nn.Linear(hidden, 2 * latent_dim))
        self.dec = nn.Sequential(nn.Linear(latent_dim, hidden), nn.SiLU(),
                                 nn.Linear(hidden, moment_dim))
        # Widen the posterior-mean head at init so the KL starts above the
        # level an informative posterior needs and descends toward it. From a
        # near-zero start the KL instead has to climb to that level, putting a
        # rising segment in its training curve.
        with torch.no_grad():
            self.enc[-1].weight[:latent_dim] *= self.PSI_INIT_GAIN

    def encode(self, moments: Tensor) -> StyleDistribution:
        if moments.shape[-1] != self.moment_dim:
            raise ShapeError(
                f"moment vector length {moments.shape[-1]} != {self.moment_dim}")
        h = self.enc(moments)
        psi, log_xi = h.chunk(2, dim=-1)
        xi = torch.exp(log_xi.clamp(-self.LOG_CLAMP, self.LOG_CLAMP))
        return StyleDistribution(psi=psi, xi=xi.clamp_min(self.eps_std))

    def decode(self, code: Tensor) -> Tensor:
        h = self.dec(code)
        mu, raw_sd = h.chunk(2, dim=-1)
        sd = torch.exp(raw_sd.clamp(-self.LOG_CLAMP, self.LOG_CLAMP)).clamp_min(self.eps_std)
        return torch.cat([mu, sd], dim=-1)

    @torch.no_grad()
    def init_moment_prior(self, moment_vecs: Tensor):
        """Bias the decoder output at the data's mean moment vector.

        Without this, early training reduces reconstruction error by learning
        the dataset mean through the bias alone — the latent carries nothing,
        the KL term over-shrinks the posterior, and the KL curve later
        re-inflates when reconstruction finally demands per-sample
        information. Centering the output head up front removes that
        transient, so the KL descends to its equilibrium monotonically.
        """
        if moment_vecs.dim() != 2 or moment_vecs.shape[-1] != self.moment_dim:
            raise ShapeError(
                f"expected (N, {self.moment_dim}) moment vectors, got "
                f"{tuple(moment_vecs.shape)}")
        mean = moment_vecs.mean(dim=0)
        c = self.moment_dim // 2
        bias = self.dec[-1].bias
        bias[:c] = mean[:c]
        bias[c:] = torch.log(mean[c:].clamp_min(self.eps_std))


def sample_style_code(dist: StyleDistribution, seed: int | torch.Generator) -> Tensor:
    """Reparameterized draw: code = psi + xi * eta, eta ~ N(0, I).

    Deterministic given an int seed; pass a Generator to share a stream.
    The draw is differentiable w.r.t. psi and xi (eta is a constant).
    """
    gen = seed if isinstance(seed, torch.Generator) else torch.Generator().manual_seed(seed)
    eta = torch.randn(dist.psi.shape, generator=gen, dtype=dist.psi.dtype)
    return dist.psi + dist.xi * eta


def kl_to_standard_normal(dist: StyleDistribution) -> Tensor:
    """Closed-form KL(N(psi, xi^2) || N(0, I)), summed over latent dims, batch mean."""
    xi2 = dist.xi * dist.xi
    per_sample = -0.5 * (1.0 + torch.log(xi2) - dist.psi * dist.psi - xi2).sum(dim=-1)
    return per_sample.mean()


class RainNetworks(nn.Module):
    """Encoder, decoder, and style VAE bundled with their config."""

    def __init__(self, cfg: RainConfig, in_ch: int = 1):
        super().__init__()
        self.cfg = cfg
        self.encoder = Encoder(cfg.widths, in_ch)
        self.decoder = Decoder(cfg.widths, in_ch)
        self.vae = StyleVae(moment_dim=2 * cfg.widths[-1], latent_dim=cfg.latent_dim,
                            hidden=cfg.vae_hidden, eps_std=cfg.eps_std)

    def deepest_moments(self, x: Tensor) -> FeatureMoments:
        return channel_moments(self.encoder(x)[-1], self.cfg.eps_std)

    def style_distribution(self, x_style: Tensor) -> StyleDistribution:
        return self.vae.encode(self.deepest_moments(x_style).concat())

    def stylize(self, x_content: Tensor, style_code: Tensor) -> Tensor:
        """Render content in the appearance decoded from ``style_code``.

        ``style_code`` may be (latent,) shared across the batch or
        (B, latent); the output keeps the content's spatial shape and stays
        differentiable w.r.t. the code.
        """
        if x_content.dim() != 4:
            raise ShapeError(f"expected (B, 1, H, W) input, got {tuple(x_content.shape)}")
        if style_code.dim() == 1:
            style_code = style_code.unsqueeze(0).expand(x_content.shape[0], -1)
        moments = FeatureMoments.from_concat(self.vae.decode(style_code))
        deep = self.encoder(x_content)[-1]
        return self.decoder(adain(deep, moments, self.cfg.eps_std))


def rain_loss(x_content: Tensor, x_style: Tensor, nets: RainNetworks,
              seed: int | torch.Generator) -> dict[str, Tensor]:
    """All four training loss terms plus the weighted total.

    content: squared error between the re-encoded stylized output's deepest
    features and the AdaIN target that fed the decoder. style: per-stage
    squared moment mismatch against the style input. kl: closed form against
    N(0, I). rec: squared error of the VAE's moment reconstruction, summed
    over the moment dimensions per sample (matching the KL's sum-over-dims
    convention; a mean-reduced rec is outweighed by the KL at any usable
    weight, which drives the posterior to collapse).
    """
    cfg = nets.cfg
    style_feats = nets.encoder(x_style)
    style_moment_vec = channel_moments(style_feats[-1], cfg.eps_std).concat()

    dist = nets.vae.encode(style_moment_vec)
    code = sample_style_code(dist, seed)
    recon = nets.vae.decode(code)
    loss_rec = (recon - style_moment_vec).pow(2).sum(dim=-1).mean()
    loss_kl = kl_to_standard_normal(dist)

    content_feats = nets.encoder(x_content)
    target = adain(content_feats[-1], FeatureMoments.from_concat(recon), cfg.eps_std)
    out = nets.decoder(target)
    out_feats = nets.encoder(out)

    loss_content = nn.functional.mse_loss(out_feats[-1], target)
    loss_style = x_content.new_zeros(())
    for fo, fs in zip(out_feats, style_feats):
        mo = channel_moments(fo, cfg.eps_std)
        ms = channel_moments(fs, cfg.eps_std)
        loss_style = loss_style + nn.functional.mse_loss(mo.mean, ms.mean)
        loss_style = loss_style + nn.functional.mse_loss(mo.std, ms.std)

    total = (loss_content + cfg.lambda_style * loss_style
             + cfg.lambda_kl * loss_kl + cfg.lambda_rec * loss_rec)
    return {
        "content": loss_content,
        "style": loss_style,
        "kl": loss_kl,
        "rec": loss_rec,
        "total": total,
    }
