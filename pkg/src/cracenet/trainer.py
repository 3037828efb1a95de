"""Desk-scale training loop: SGD with momentum, warm-up, augmentation.

The optimizer follows the classic recipe: velocity v <- m*v + g + wd*p,
parameter p <- p - lr(t)*v, with the encoder on a 10x smaller learning
rate than everything else (the depth branch counts as decoder).  The
schedule ramps linearly over the warm-up steps, then decays polynomially
(power 0.9).

Every random decision is drawn from a generator seeded by (seed, step,
sample), so runs are bit-identical for a fixed seed and training resumes
exactly from a checkpoint.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np

from .crace import CraceConfig
from .data import Sample, load_checkpoint, save_checkpoint, save_gray
from .layers import resize_bilinear_np, resize_nearest_np
from .losses import (
    LossConfig,
    bce_loss,
    make_edge_gt,
    multilevel_edge_loss,
    multilevel_saliency_loss,
    saliency_term,
)
from .metrics import MetricReport, evaluate_pairs
from .network import EncoderConfig, NetworkConfig, SodNetwork
from .tensor import Tensor, backward, sigmoid, zero_grads

__all__ = [
    "ABLATION_SCHEDULE",
    "DivergenceError",
    "TrainConfig",
    "TrainResult",
    "augment",
    "build_model_from_checkpoint",
    "config_snapshot",
    "evaluate_model",
    "flip_horizontal",
    "format_ablation_table",
    "lr_multiplier",
    "predict_maps",
    "random_crop",
    "run_ablation",
    "sgd_step",
    "train",
]

MULTISCALE_FACTORS = (0.75, 1.0, 1.25)


class DivergenceError(RuntimeError):
    """Loss or gradient went non-finite; training aborted."""

    def __init__(self, message: str, last_checkpoint: Path | None = None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


@dataclass
class TrainConfig:
    total_steps: int = 500
    batch_size: int = 4
    input_size: int = 64  # 352 for full parity runs
    seed: int = 0
    mode: str = "rgb"
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_backbone: float = 0.005
    lr_head: float = 0.05  # 10x the backbone rate
    warmup_steps: int | None = None  # default: 5% of total
    hflip: bool = True
    random_crop: bool = True
    multiscale: bool = True
    checkpoint_interval: int = 100

    def __post_init__(self):
        if self.mode not in ("rgb", "rgbd"):
            raise ValueError(f"mode must be 'rgb' or 'rgbd', got {self.mode!r}")
        if self.lr_backbone <= 0 or self.lr_head <= 0:
            raise ValueError("learning rates must be positive")
        if self.input_size % 32:
            raise ValueError("input_size must be a multiple of 32")

    @property
    def warmup(self) -> int:
        if self.warmup_steps is not None:
            return max(1, self.warmup_steps)
        return max(1, round(0.05 * self.total_steps))


@dataclass
class TrainResult:
    model: SodNetwork
    log_rows: list
    checkpoint_path: Path | None
    loss_log_path: Path | None


def lr_multiplier(step: int, total: int, warmup: int) -> float:
    """Linear ramp over the warm-up, then polynomial decay (power 0.9)."""
    if step < warmup:
        return (step + 1) / warmup
    if total <= warmup:
        return 1.0
    progress = (step - warmup) / (total - warmup)
    return float((1.0 - progress) ** 0.9)


def _base_lr(name: str, cfg: TrainConfig) -> float:
    return cfg.lr_backbone if name.startswith("rgb_encoder.") else cfg.lr_head


def sgd_step(
    params: dict[str, Tensor],
    velocities: dict[str, np.ndarray],
    cfg: TrainConfig,
    multiplier: float = 1.0,
) -> None:
    """One momentum-SGD update over all parameters, in name order."""
    for name in params:
        p = params[name]
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in {name!r}")
        v = velocities[name]
        v[...] = cfg.momentum * v + g + cfg.weight_decay * p.data
        p.data = p.data - (_base_lr(name, cfg) * multiplier) * v


# -- augmentation --------------------------------------------------------------


def flip_horizontal(image: np.ndarray, gt: np.ndarray, depth: np.ndarray | None):
    """Mirror all aligned fields; applying it twice is the identity."""
    image = image[..., ::-1].copy()
    gt = gt[..., ::-1].copy()
    depth = depth[..., ::-1].copy() if depth is not None else None
    return image, gt, depth


def snap32(value: float) -> int:
    """Nearest multiple of 32 (ties round up), floored at 32."""
    return max(32, int(np.floor(value / 32.0 + 0.5)) * 32)


def random_crop(
    image: np.ndarray,
    gt: np.ndarray,
    depth: np.ndarray | None,
    rng: np.random.Generator,
    min_frac: float = 0.8,
):
    """One shared crop window over all aligned fields."""
    H, W = gt.shape
    frac = rng.uniform(min_frac, 1.0)
    ch, cw = max(1, round(H * frac)), max(1, round(W * frac))
    oy = int(rng.integers(0, H - ch + 1))
    ox = int(rng.integers(0, W - cw + 1))
    image = image[:, oy : oy + ch, ox : ox + cw]
    gt = gt[oy : oy + ch, ox : ox + cw]
    if depth is not None:
        depth = depth[oy : oy + ch, ox : ox + cw]
    return image, gt, depth


def augment(
    sample: Sample,
    cfg: TrainConfig,
    rng: np.random.Generator,
    target_hw: tuple[int, int] | None = None,
):
    """Geometric augmentation applied identically to image, GT and depth.

    Ground truth is resampled nearest-neighbor so it stays binary.
    """
    image, gt, depth = sample.image, sample.gt, sample.depth
    if cfg.hflip and rng.random() < 0.5:
        image, gt, depth = flip_horizontal(image, gt, depth)
    if cfg.random_crop:
        image, gt, depth = random_crop(image, gt, depth, rng)
    if target_hw is None:
        target_hw = (cfg.input_size, cfg.input_size)
    image = resize_bilinear_np(image, target_hw)
    gt = resize_nearest_np(gt, target_hw)
    if depth is not None:
        depth = resize_bilinear_np(depth, target_hw)
    return image, gt, depth


# -- loss assembly ----------------------------------------------------------------


def _assemble_losses(outputs: dict, gt: np.ndarray, edge: np.ndarray, loss_cfg: LossConfig, mode: str):
    sal = [sigmoid(t) for t in outputs["saliency_logits"]]
    edges = [sigmoid(t) for t in outputs["edge_logits"]]
    gt4 = gt[:, None]
    edge4 = edge[:, None]
    if loss_cfg.use_multilevel:
        l_s = multilevel_saliency_loss(sal, gt4, use_bce=loss_cfg.use_bce, use_iou=loss_cfg.use_iou)
        l_e = multilevel_edge_loss(edges, edge4)
    else:
        l_s = saliency_term(sal[0], gt4, loss_cfg.use_bce, loss_cfg.use_iou)
        l_e = bce_loss(edges[0], edge4)
    parts = {"L_S": l_s.item(), "L_E": l_e.item()}
    if mode == "rgbd":
        dep = [sigmoid(t) for t in outputs["depth_logits"]]
        if loss_cfg.use_multilevel:
            l_d = multilevel_saliency_loss(dep, gt4, use_bce=loss_cfg.use_bce, use_iou=loss_cfg.use_iou)
        else:
            l_d = saliency_term(dep[0], gt4, loss_cfg.use_bce, loss_cfg.use_iou)
        parts["L_D"] = l_d.item()
        total = (l_s + l_d + l_e) / 3.0 if loss_cfg.use_edge else (l_s + l_d) / 2.0
    else:
        total = (l_s + l_e) / 2.0 if loss_cfg.use_edge else l_s
    return total, parts


# -- checkpoint plumbing ------------------------------------------------------------


def config_snapshot(
    step: int, cfg: TrainConfig, net_cfg: NetworkConfig, loss_cfg: LossConfig
) -> dict:
    crace = asdict(net_cfg.crace)
    if crace.get("branches") is not None:
        crace["branches"] = [list(b) for b in crace["branches"]]
    return {
        "step": step,
        "train": asdict(cfg),
        "loss": asdict(loss_cfg),
        "network": {
            "mode": net_cfg.mode,
            "encoder": asdict(net_cfg.encoder),
            "crace": crace,
        },
    }


def configs_from_snapshot(snapshot: dict):
    train_cfg = TrainConfig(**snapshot["train"])
    loss_cfg = LossConfig(**snapshot["loss"])
    net = snapshot["network"]
    crace = dict(net["crace"])
    if crace.get("branches") is not None:
        crace["branches"] = tuple(tuple(b) for b in crace["branches"])
    crace["sampling_rates"] = tuple(crace["sampling_rates"])
    crace["dilation_rates"] = tuple(crace["dilation_rates"])
    enc = dict(net["encoder"])
    enc["widths"] = tuple(enc["widths"])
    net_cfg = NetworkConfig(EncoderConfig(**enc), CraceConfig(**crace), net["mode"])
    return train_cfg, net_cfg, loss_cfg


def build_model_from_checkpoint(path) -> tuple[SodNetwork, TrainConfig, NetworkConfig, LossConfig]:
    snapshot, arrays = load_checkpoint(path)
    train_cfg, net_cfg, loss_cfg = configs_from_snapshot(snapshot)
    model = SodNetwork(net_cfg, seed=train_cfg.seed)
    model.load_arrays(arrays)
    return model, train_cfg, net_cfg, loss_cfg


def _save_training_checkpoint(path, step, model, velocities, cfg, net_cfg, loss_cfg):
    arrays = model.export_arrays()
    for name, v in velocities.items():
        arrays["optim/" + name] = v
    save_checkpoint(path, config_snapshot(step, cfg, net_cfg, loss_cfg), arrays)


# -- the loop ------------------------------------------------------------------------


def _batch_rng(seed: int, step: int, k: int | None = None) -> np.random.Generator:
    entropy = (seed, step) if k is None else (seed, step, k)
    return np.random.default_rng(np.random.SeedSequence(entropy=entropy))


def train(
    samples: list[Sample],
    cfg: TrainConfig,
    net_cfg: NetworkConfig | None = None,
    loss_cfg: LossConfig | None = None,
    out_dir=None,
    resume=None,
    verbose: bool = False,
) -> TrainResult:
    """Run the full schedule; returns the model, loss log, and checkpoint.

    With ``out_dir`` set, writes ``checkpoint.ckpt`` (at intervals and at
    the end) and ``loss_log.tsv``.  ``resume`` continues bit-identically
    from a previous checkpoint given the same seed stream.
    """
    if not samples:
        raise ValueError("dataset is empty")
    if cfg.mode == "rgbd" and any(s.depth is None for s in samples):
        raise ValueError("rgbd training requires depth for every sample")
    net_cfg = net_cfg or NetworkConfig.default(cfg.mode)
    loss_cfg = loss_cfg or LossConfig()
    if net_cfg.mode != cfg.mode:
        raise ValueError("network mode and train config mode differ")

    model = SodNetwork(net_cfg, seed=cfg.seed)
    params = model.param_dict()
    velocities = {name: np.zeros_like(p.data) for name, p in params.items()}
    start_step = 0
    if resume is not None:
        snapshot, arrays = load_checkpoint(resume)
        model.load_arrays(arrays)
        for name in velocities:
            velocities[name] = arrays["optim/" + name].copy()
        start_step = int(snapshot["step"])

    out_dir = Path(out_dir) if out_dir is not None else None
    ckpt_path = out_dir / "checkpoint.ckpt" if out_dir else None
    log_path = out_dir / "loss_log.tsv" if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    columns = ["step", "lr", "L_total", "L_S", "L_E"]
    if cfg.mode == "rgbd":
        columns.append("L_D")
    log_rows: list[dict] = []
    log_lines = ["\t".join(columns)]
    last_saved: Path | None = Path(resume) if resume is not None else None
    t0 = time.time()

    for step in range(start_step, cfg.total_steps):
        step_rng = _batch_rng(cfg.seed, step)
        n = len(samples)
        idx = step_rng.choice(n, size=cfg.batch_size, replace=n < cfg.batch_size)
        if cfg.multiscale:
            factor = MULTISCALE_FACTORS[int(step_rng.integers(len(MULTISCALE_FACTORS)))]
            side = snap32(cfg.input_size * factor)
        else:
            side = cfg.input_size
        images, gts, depths, edges = [], [], [], []
        for k, i in enumerate(idx):
            rng_k = _batch_rng(cfg.seed, step, k)
            img, gt, dep = augment(samples[int(i)], cfg, rng_k, (side, side))
            images.append(img)
            gts.append(gt)
            edges.append(make_edge_gt(gt, loss_cfg.edge_radius))
            if cfg.mode == "rgbd":
                depths.append(dep)
        image_t = Tensor(np.stack(images))
        depth_t = Tensor(np.stack(depths)[:, None]) if cfg.mode == "rgbd" else None

        outputs = model.forward(image_t, depth_t, training=True)
        total, parts = _assemble_losses(
            outputs, np.stack(gts), np.stack(edges), loss_cfg, cfg.mode
        )
        if not np.isfinite(total.item()):
            raise DivergenceError(
                f"loss became non-finite at step {step}", last_checkpoint=last_saved
            )

        zero_grads(params.values())
        backward(total)
        mult = lr_multiplier(step, cfg.total_steps, cfg.warmup)
        try:
            sgd_step(params, velocities, cfg, mult)
        except DivergenceError as err:
            raise DivergenceError(str(err), last_checkpoint=last_saved) from None

        row = {"step": step, "lr": cfg.lr_head * mult, "L_total": total.item(), **parts}
        log_rows.append(row)
        log_lines.append("\t".join(_fmt_cell(row.get(c)) for c in columns))
        if verbose and (step % 50 == 0 or step == cfg.total_steps - 1):
            print(
                f"step {step:5d}  lr {row['lr']:.5f}  loss {row['L_total']:.4f}  "
                f"({time.time() - t0:.1f}s)",
                flush=True,
            )
        if out_dir and (step + 1) % cfg.checkpoint_interval == 0 and step + 1 < cfg.total_steps:
            interval_path = out_dir / f"checkpoint_step{step + 1:06d}.ckpt"
            _save_training_checkpoint(
                interval_path, step + 1, model, velocities, cfg, net_cfg, loss_cfg
            )
            last_saved = interval_path

    if ckpt_path:
        _save_training_checkpoint(
            ckpt_path, cfg.total_steps, model, velocities, cfg, net_cfg, loss_cfg
        )
    if log_path:
        log_path.write_text("\n".join(log_lines) + "\n")
    return TrainResult(model, log_rows, ckpt_path, log_path)


def _fmt_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return f"{value:.6f}"


# -- evaluation helpers ------------------------------------------------------------


def predict_maps(model: SodNetwork, samples: list[Sample]) -> list[np.ndarray]:
    use_depth = model.mode == "rgbd"
    return [model.infer(s.image, s.depth if use_depth else None) for s in samples]


def evaluate_model(model: SodNetwork, samples: list[Sample]) -> MetricReport:
    preds = predict_maps(model, samples)
    gts = [s.gt for s in samples]
    return evaluate_pairs(preds, gts, [s.id for s in samples])


def predict_to_dir(model: SodNetwork, samples: list[Sample], out_dir, dump_levels=False):
    """Write final saliency maps (and per-level maps on request) as PGM."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for s in samples:
        img = Tensor(s.image[None])
        dep = Tensor(s.depth[None, None]) if model.mode == "rgbd" else None
        out = model.forward(img, dep, training=False)
        final = sigmoid(out["saliency_logits"][0]).data[0, 0]
        save_gray(out_dir / f"{s.id}.pgm", final)
        if dump_levels:
            for level, (sal, edg) in enumerate(
                zip(out["saliency_logits"], out["edge_logits"]), start=2
            ):
                save_gray(out_dir / f"{s.id}_P{level}.pgm", sigmoid(sal).data[0, 0])
                save_gray(out_dir / f"{s.id}_E{level}.pgm", sigmoid(edg).data[0, 0])


# -- ablation harness -----------------------------------------------------------------


def _blocks(ca=False, cha=False, ms=False, af=False) -> dict:
    return {
        "enable_cross_attention": ca,
        "enable_channel_attention": cha,
        "enable_multiscale": ms,
        "enable_attentive_fusion": af,
    }


ABLATION_SCHEDULE: list[tuple[str, dict, dict, str | None]] = [
    ("baseline", _blocks(), {}, None),
    ("+CA", _blocks(ca=True), {}, None),
    ("+CA+ChA", _blocks(ca=True, cha=True), {}, None),
    ("+CA+ChA+MS", _blocks(ca=True, cha=True, ms=True), {}, None),
    ("w/o Depth", _blocks(ca=True, cha=True, ms=True, af=True), {}, "rgb"),
    ("w/o Edge", _blocks(ca=True, cha=True, ms=True, af=True), {"use_edge": False}, None),
    ("w/o BCE", _blocks(ca=True, cha=True, ms=True, af=True), {"use_bce": False}, None),
    ("w/o IoU", _blocks(ca=True, cha=True, ms=True, af=True), {"use_iou": False}, None),
    ("w/o MLS", _blocks(ca=True, cha=True, ms=True, af=True), {"use_multilevel": False}, None),
    ("full", _blocks(ca=True, cha=True, ms=True, af=True), {}, None),
]


def run_ablation(
    samples: list[Sample],
    cfg: TrainConfig,
    net_cfg: NetworkConfig | None = None,
    eval_samples: list[Sample] | None = None,
    rows: list[str] | None = None,
    verbose: bool = False,
) -> dict[str, MetricReport]:
    """Train and evaluate every ablation row from one config matrix.

    The "w/o Depth" row only applies in rgbd mode; it retrains the model
    as a pure RGB network on the same images.
    """
    net_cfg = net_cfg or NetworkConfig.default(cfg.mode)
    eval_samples = eval_samples or samples
    results: dict[str, MetricReport] = {}
    for name, blocks, loss_over, mode_over in ABLATION_SCHEDULE:
        if rows is not None and name not in rows:
            continue
        if name == "w/o Depth" and cfg.mode != "rgbd":
            continue
        mode = mode_over or cfg.mode
        row_cfg = replace(cfg, mode=mode)
        crace = replace(net_cfg.crace, depth_input=(mode == "rgbd"), **blocks)
        row_net = NetworkConfig(net_cfg.encoder, crace, mode)
        row_loss = LossConfig(**loss_over)
        if verbose:
            print(f"[ablation] {name}", flush=True)
        result = train(samples, row_cfg, row_net, row_loss)
        results[name] = evaluate_model(result.model, eval_samples)
    return results


def format_ablation_table(results: dict[str, MetricReport]) -> str:
    cols = ("maxF", "mF", "wF", "Sm")
    width = max(len(name) for name in results) + 2
    lines = ["".join(["model".ljust(width)] + [f"{c:>8s}" for c in cols])]
    for name, report in results.items():
        vals = report.as_dict()
        lines.append(
            "".join([name.ljust(width)] + [f"{vals[c]:8.4f}" for c in cols])
        )
    return "\n".join(lines)
