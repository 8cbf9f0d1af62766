"""Two-stage training orchestration, evaluation, and image-grid emission.

Stage 1 pretrains the style-transfer module on source-content and auxiliary
style slices only; stage 2 freezes it, pretrains the segmenter on source plus
stylized images (phase A) and then alternates adversarial style-code ascent
with segmenter descent (phase B). All randomness flows from the run seed
through explicit generators, so identical config+seed reproduces identical
outputs on the same platform.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .adversarial import (AdvState, ascent_step, grad_wrt_style_code,
                          make_adv_state, sample_initial_code, seg_loss_of_code)
from .checkpoint import (load_checkpoint, load_into_module, module_arrays,
                         save_checkpoint, state_digest)
from .config import RainConfig, RunConfig, SegConfig, build_section, to_dict
from .dataio import load_dataset, save_dataset
from .errors import AscentAborted, ConfigError
from .metrics import MetricsReport, evaluate, format_report_text, write_report_csv
from .phantom import gen_phantom
from .preprocess import affine_augment, center_crop, minmax_normalize
from .rain import RainNetworks, rain_loss
from .seg_losses import seg_total_loss
from .segmenter import DRUNet
from .slices import Dataset, LabelMask, Modality, Slice

RAIN_CKPT = "rain.ckpt"
SEG_CKPT = "seg.ckpt"


# ---------------------------------------------------------------------------
# data plumbing

@dataclass
class SliceBank:
    """Preprocessed slices as parallel numpy arrays, ready for batching."""

    images: list[np.ndarray]
    masks: list[np.ndarray] | None
    slices: list[Slice]

    def __len__(self) -> int:
        return len(self.images)

    @property
    def spacing(self) -> tuple[float, float]:
        return self.slices[0].spacing


def preprocess_pair(sl: Slice, mask: LabelMask | None, crop_size: int | None
                    ) -> tuple[Slice, LabelMask | None]:
    sl = minmax_normalize(sl)
    if crop_size is not None:
        sl, mask = center_crop(sl, mask, crop_size, crop_size)
    return sl, mask


def make_bank(ds: Dataset, crop_size: int | None, need_masks: bool) -> SliceBank:
    images, masks, slices = [], [], []
    for rec in ds:
        if need_masks and rec.mask is None:
            raise ConfigError(
                f"slice {rec.image.patient_id}/{rec.image.slice_index} has no label mask")
        sl, mask = preprocess_pair(rec.image, rec.mask, crop_size)
        images.append(sl.pixels)
        masks.append(mask.labels if mask is not None else None)
        slices.append(sl)
    if not images:
        raise ConfigError("empty slice set")
    has_masks = need_masks and all(m is not None for m in masks)
    return SliceBank(images=images, masks=masks if has_masks else None, slices=slices)


def bank_tensor(bank: SliceBank) -> torch.Tensor:
    return torch.from_numpy(np.stack(bank.images)[:, None]).float()


class BatchSampler:
    """Epoch-shuffled index stream with a private numpy generator."""

    def __init__(self, n: int, batch_size: int, seed: int):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = np.random.default_rng(seed)
        self._queue: list[int] = []

    def next(self) -> np.ndarray:
        while len(self._queue) < self.batch_size:
            self._queue.extend(self.rng.permutation(self.n).tolist())
        out, self._queue = self._queue[:self.batch_size], self._queue[self.batch_size:]
        return np.asarray(out)


def assemble_batch(bank: SliceBank, idx: np.ndarray, cfg: RunConfig,
                   augment: bool, aug_seed: int
                   ) -> tuple[torch.Tensor, torch.Tensor | None]:
    imgs, labs = [], []
    for j, i in enumerate(idx):
        img = bank.images[i]
        lab = bank.masks[i] if bank.masks is not None else None
        if augment and lab is not None and cfg.data.augment_enabled:
            sl, m = affine_augment(bank.slices[i], LabelMask(lab),
                                   cfg.data.augment, seed=aug_seed * 1009 + j)
            img, lab = sl.pixels, m.labels
        imgs.append(img)
        if lab is not None:
            labs.append(lab)
    x = torch.from_numpy(np.stack(imgs)[:, None]).float()
    y = torch.from_numpy(np.stack(labs).astype(np.int64)) if labs else None
    return x, y


def _warmup_cosine_lr(base_lr: float, it: int, total: int, warmup: int) -> float:
    if warmup > 0 and it < warmup:
        return base_lr * (it + 1) / warmup
    span = max(total - warmup, 1)
    frac = min((it - warmup) / span, 1.0)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def _poly_lr(base_lr: float, it: int, total: int, power: float) -> float:
    if total <= 0:
        return base_lr
    frac = min(it, total - 1) / total
    return base_lr * (1.0 - frac) ** power


# ---------------------------------------------------------------------------
# stage 1

def train_stage1(cfg: RunConfig, data_root: str | Path, out_dir: str | Path,
                 seed: int | None = None) -> Path:
    """Pretrain the stylizer on content + auxiliary-style data; target never read."""
    seed = cfg.seed if seed is None else seed
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rcfg = cfg.rain

    ds = load_dataset(data_root, modalities={Modality.SOURCE_CONTENT, Modality.STYLE_AUX})
    train_pats = list(cfg.data.train_patients)
    content = make_bank(ds.filter(Modality.SOURCE_CONTENT, train_pats),
                        cfg.data.crop_size, need_masks=False)
    style = make_bank(ds.filter(Modality.STYLE_AUX, train_pats),
                      cfg.data.crop_size, need_masks=False)

    # Held-out monitoring batch from patients the stage never trains on.
    holdout_pats = [p for p in ds.patients(Modality.SOURCE_CONTENT)
                    if p not in set(train_pats)]
    holdout = None
    if holdout_pats:
        hc = make_bank(ds.filter(Modality.SOURCE_CONTENT, holdout_pats),
                       cfg.data.crop_size, need_masks=False)
        hs = make_bank(ds.filter(Modality.STYLE_AUX, holdout_pats),
                       cfg.data.crop_size, need_masks=False)
        k = min(rcfg.batch_size, len(hc), len(hs))
        holdout = (bank_tensor(hc)[:k], bank_tensor(hs)[:k])

    torch.manual_seed(seed * 7919 + 1)
    nets = RainNetworks(rcfg)
    with torch.no_grad():
        xs = bank_tensor(style)
        mv = torch.cat([nets.deepest_moments(xs[i:i + 32]).concat()
                        for i in range(0, len(xs), 32)])
        nets.vae.init_moment_prior(mv)
    fast = list(nets.decoder.parameters()) + list(nets.vae.dec.parameters())
    slow = list(nets.vae.enc.parameters())
    if rcfg.train_encoder:
        fast += list(nets.encoder.parameters())
    else:
        nets.encoder.requires_grad_(False)
    opt = torch.optim.SGD(
        [{"params": fast, "lr_scale": 1.0},
         {"params": slow, "lr_scale": rcfg.posterior_lr_scale}],
        lr=rcfg.lr, momentum=rcfg.momentum, weight_decay=rcfg.weight_decay)

    content_sampler = BatchSampler(len(content), rcfg.batch_size, seed * 31 + 2)
    style_sampler = BatchSampler(len(style), rcfg.batch_size, seed * 31 + 3)
    sample_gen = torch.Generator().manual_seed(seed * 31 + 4)
    holdout_seed = seed * 31 + 5

    csv_path = out_dir / "rain_loss.csv"
    fields = ["iteration", "loss_content", "loss_style", "loss_kl", "loss_rec", "loss_total"]
    if holdout is not None:
        fields += ["holdout_content", "holdout_style", "holdout_kl", "holdout_rec",
                   "holdout_total"]
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for it in range(rcfg.iters):
            base = _warmup_cosine_lr(rcfg.lr, it, rcfg.iters, rcfg.lr_warmup)
            for g in opt.param_groups:
                g["lr"] = base * g["lr_scale"]
            xb, _ = assemble_batch(content, content_sampler.next(), cfg, False, 0)
            sb, _ = assemble_batch(style, style_sampler.next(), cfg, False, 0)
            losses = rain_loss(xb, sb, nets, sample_gen)
            log_now = it % rcfg.log_every == 0 or it == rcfg.iters - 1
            if log_now and holdout is not None:
                # Evaluated before the update, on the same parameters the
                # train losses describe. Re-seeded generator: same noise draw
                # every eval, so the curve tracks parameters only.
                with torch.no_grad():
                    hl = rain_loss(holdout[0], holdout[1], nets, holdout_seed)
            opt.zero_grad()
            losses["total"].backward()
            opt.step()
            if log_now:
                row = [it] + [f"{float(losses[k].detach()):.8f}"
                              for k in ("content", "style", "kl", "rec", "total")]
                if holdout is not None:
                    row += [f"{float(hl[k]):.8f}"
                            for k in ("content", "style", "kl", "rec", "total")]
                writer.writerow(row)

    ckpt_path = out_dir / RAIN_CKPT
    save_checkpoint(ckpt_path, "rain", to_dict(rcfg), module_arrays(nets))
    return ckpt_path


def load_rain(ckpt_path: str | Path, expected=None) -> RainNetworks:
    config, arrays = load_checkpoint(ckpt_path, expected_kind="rain",
                                     expected_config=expected)
    nets = RainNetworks(build_section(RainConfig, config))
    load_into_module(nets, arrays)
    nets.eval()
    nets.requires_grad_(False)
    return nets


def load_seg(ckpt_path: str | Path, expected=None) -> DRUNet:
    config, arrays = load_checkpoint(ckpt_path, expected_kind="seg",
                                     expected_config=expected)
    net = DRUNet(build_section(SegConfig, config))
    load_into_module(net, arrays)
    net.eval()
    return net


# ---------------------------------------------------------------------------
# stage 2

def _select_target(ds: Dataset, cfg: RunConfig, scope: str,
                   target_slice: int | None) -> Dataset:
    tset = ds.filter(Modality.TARGET, [cfg.data.target_patient]).without_masks()
    if len(tset) == 0:
        raise ConfigError(f"no target slices for patient {cfg.data.target_patient!r}")
    if scope == "few-shot":
        return tset
    if scope == "one-shot":
        indices = [r.image.slice_index for r in tset]
        want = indices[len(indices) // 2] if target_slice is None else target_slice
        picked = [r for r in tset if r.image.slice_index == want]
        if not picked:
            raise ConfigError(
                f"target slice {want} not found for patient {cfg.data.target_patient!r}")
        return Dataset(picked)
    raise ConfigError(f"target scope must be 'few-shot' or 'one-shot', got {scope!r}")


def train_stage2(cfg: RunConfig, data_root: str | Path,
                 rain_ckpt: str | Path | None, out_dir: str | Path,
                 seed: int | None = None, target_scope: str = "few-shot",
                 target_slice: int | None = None, baseline: bool = False) -> Path:
    """Train the segmenter; phase A uses fixed sampled styles, phase B adds ascent.

    With ``baseline=True`` the stylizer is bypassed entirely (source-only
    supervised training over the same iteration budget).
    """
    seed = cfg.seed if seed is None else seed
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scfg = cfg.seg

    ds = load_dataset(data_root)
    source = make_bank(ds.filter(Modality.SOURCE_CONTENT, list(cfg.data.train_patients)),
                       cfg.data.crop_size, need_masks=True)

    rain = None
    state: AdvState | None = None
    rain_digest = None
    if not baseline:
        if rain_ckpt is None or not Path(rain_ckpt).is_file():
            raise ConfigError(f"rain checkpoint not found: {rain_ckpt}")
        rain = load_rain(rain_ckpt)
        rain_digest = state_digest(rain)
        target = make_bank(_select_target(ds, cfg, target_scope, target_slice),
                           cfg.data.crop_size, need_masks=False)
        state = make_adv_state(bank_tensor(target), rain,
                               step_size=cfg.adversarial.step_size,
                               resample_period=cfg.adversarial.resample_period,
                               seed=seed * 31 + 11)

    torch.manual_seed(seed * 7919 + 2)
    seg = DRUNet(scfg)
    opt = torch.optim.SGD(seg.parameters(), lr=scfg.lr, momentum=scfg.momentum,
                          weight_decay=scfg.weight_decay)
    sampler = BatchSampler(len(source), scfg.batch_size, seed * 31 + 12)
    total_iters = scfg.pretrain_iters + scfg.adv_iters

    loss_csv = open(out_dir / "seg_loss.csv", "w", newline="")
    loss_writer = csv.writer(loss_csv)
    loss_writer.writerow(["iteration", "phase", "loss_seg", "loss_con", "loss_total"])
    traj_csv = open(out_dir / "ascent_trajectory.csv", "w", newline="")
    traj_writer = csv.writer(traj_csv)
    traj_writer.writerow(["iteration", "code_norm", "seg_loss_before",
                          "seg_loss_after", "resampled"])
    try:
        for it in range(total_iters):
            phase_b = it >= scfg.pretrain_iters
            for g in opt.param_groups:
                g["lr"] = _poly_lr(scfg.lr, it, total_iters, scfg.poly_power)
            xb, yb = assemble_batch(source, sampler.next(), cfg, True, seed * 100003 + it)

            if baseline:
                out = seg(xb)
                parts = seg_total_loss(out.logits, None, yb, out.bottleneck,
                                       out.bottleneck, 0.0, scfg.jaccard_smooth)
                opt.zero_grad()
                parts.seg.backward()
                opt.step()
                val = float(parts.seg.detach())
                loss_writer.writerow([it, "baseline", f"{val:.8f}",
                                      "0.00000000", f"{val:.8f}"])
                continue

            assert rain is not None and state is not None
            if phase_b:
                state = _ascent_update(state, xb, yb, rain, seg, scfg.jaccard_smooth,
                                       traj_writer)
            elif it > 0 and it % state.resample_period == 0:
                # Phase A keeps styles fixed between periodic resamples.
                state = _resample(state)

            with torch.no_grad():
                stylized = rain.stylize(xb, state.style_code)
            out_s = seg(xb)
            out_t = seg(stylized)
            logits = torch.cat([out_s.logits, out_t.logits], dim=0)
            labels = torch.cat([yb, yb], dim=0)
            parts = seg_total_loss(logits, None, labels, out_s.bottleneck,
                                   out_t.bottleneck, scfg.lambda_consistency,
                                   scfg.jaccard_smooth)
            opt.zero_grad()
            parts.total.backward()
            opt.step()
            loss_writer.writerow([it, "adv" if phase_b else "pretrain",
                                  f"{float(parts.seg.detach()):.8f}",
                                  f"{float(parts.con.detach()):.8f}",
                                  f"{float(parts.total.detach()):.8f}"])
    finally:
        loss_csv.close()
        traj_csv.close()

    if rain is not None and rain_digest is not None:
        if state_digest(rain) != rain_digest:
            raise RuntimeError("stylizer parameters changed during stage 2")

    ckpt_path = out_dir / SEG_CKPT
    save_checkpoint(ckpt_path, "seg", to_dict(scfg), module_arrays(seg))
    return ckpt_path


def _resample(state: AdvState) -> AdvState:
    return replace(state, style_code=sample_initial_code(state.slice_dists, state.rng))


def _ascent_update(state: AdvState, xb, yb, rain, seg, smooth, writer) -> AdvState:
    try:
        grad, before = grad_wrt_style_code(state.style_code, xb, yb, rain, seg, smooth)
    except AscentAborted:
        new_state = _resample(state)
        writer.writerow([state.iteration, f"{float(state.style_code.norm()):.8f}",
                         "nan", "nan", 1])
        return new_state
    new_state = ascent_step(state, grad)
    with torch.no_grad():
        after = seg_loss_of_code(new_state.style_code, xb, yb, rain, seg, smooth)
    resampled = int(new_state.iteration % new_state.resample_period == 0)
    writer.writerow([new_state.iteration, f"{float(new_state.style_code.norm()):.8f}",
                     f"{before:.8f}", f"{float(after):.8f}", resampled])
    return new_state


# ---------------------------------------------------------------------------
# evaluation / synthesis commands

def run_inference(seg: DRUNet, bank: SliceBank) -> list[LabelMask]:
    x = bank_tensor(bank)
    preds = []
    for i in range(0, len(bank), 16):
        batch = seg.predict(x[i:i + 16])
        preds.extend(LabelMask(batch[j].numpy().astype(np.uint8))
                     for j in range(batch.shape[0]))
    return preds


def evaluate_checkpoint(cfg: RunConfig, seg_ckpt: str | Path, data_root: str | Path,
                        out_dir: str | Path, label: str = "run",
                        patients: list[str] | None = None,
                        save_predictions: bool = False) -> MetricsReport:
    """Segment the target test patients and emit the metrics report files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seg = load_seg(seg_ckpt)
    pats = patients if patients is not None else list(cfg.data.test_patients)
    ds = load_dataset(data_root).filter(Modality.TARGET, pats)
    if len(ds) == 0:
        raise ConfigError(f"no target slices for patients {pats}")

    preds_by_pat: dict[str, list[LabelMask]] = {}
    truth_by_pat: dict[str, list[LabelMask]] = {}
    spacing = None
    export: dict[Modality, list] = {Modality.TARGET: []}
    for pid in sorted({r.image.patient_id for r in ds}):
        bank = make_bank(ds.filter(patients=[pid]), cfg.data.crop_size, need_masks=True)
        preds = run_inference(seg, bank)
        preds_by_pat[pid] = preds
        truth_by_pat[pid] = [LabelMask(m) for m in bank.masks]
        spacing = bank.spacing
        if save_predictions:
            export[Modality.TARGET].extend(
                (sl, pred) for sl, pred in zip(bank.slices, preds))

    report = evaluate(preds_by_pat, truth_by_pat, spacing)
    write_report_csv(out_dir / "report.csv", {label: report})
    (out_dir / "report.txt").write_text(format_report_text({label: report}))
    with open(out_dir / "per_patient.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient", "class", "dice", "hd_mm"])
        for pid, classes in report.per_patient.items():
            for cname, m in classes.items():
                w.writerow([pid, cname, f"{m.dice:.8f}", f"{m.hd_mm:.8f}"])
    if save_predictions:
        save_dataset(out_dir / "predictions", export, write_png=True)
    return report


def stylize_grid(cfg: RunConfig, rain_ckpt: str | Path, data_root: str | Path,
                 out_path: str | Path, n_content: int = 4, seed: int = 0):
    """Emit a grid: style image in the first column, contents over stylized."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rain = load_rain(rain_ckpt)
    ds = load_dataset(data_root)
    target = make_bank(_select_target(ds, cfg, "few-shot", None), cfg.data.crop_size,
                       need_masks=False)
    content = make_bank(ds.filter(Modality.SOURCE_CONTENT, list(cfg.data.train_patients)),
                        cfg.data.crop_size, need_masks=False)
    n = min(n_content, len(content))
    x = bank_tensor(content)[:n]
    style_img = bank_tensor(target)[:1]
    with torch.no_grad():
        dist = rain.style_distribution(style_img)
        from .rain import sample_style_code
        code = sample_style_code(dist, seed).reshape(-1)
        stylized = rain.stylize(x, code)

    fig, axes = plt.subplots(2, n + 1, figsize=(2 * (n + 1), 4.2))
    for ax in axes.ravel():
        ax.axis("off")
    axes[0][0].imshow(style_img[0, 0].numpy(), cmap="gray", vmin=0, vmax=1)
    axes[0][0].set_title("style", fontsize=9)
    for j in range(n):
        axes[0][j + 1].imshow(x[j, 0].numpy(), cmap="gray", vmin=0, vmax=1)
        axes[1][j + 1].imshow(stylized[j, 0].numpy(), cmap="gray", vmin=0, vmax=1)
    axes[0][1].set_title("content", fontsize=9)
    axes[1][1].set_title("stylized", fontsize=9)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def generate_dataset(cfg: RunConfig, out_root: str | Path):
    data = gen_phantom(cfg.data.phantom, cfg.data.n_patients, cfg.data.slices_per_patient)
    save_dataset(out_root, data, write_png=cfg.data.write_png)
