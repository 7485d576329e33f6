"""Training and evaluation for the three pipelines.

``ip``      2D UNet on [CVP, AvgIP, MIP] projections against projected masks.
``slice2d`` 2D UNet on single cross-sections; predictions are re-stacked.
``vol3d``   3D UNet on whole volumes.
"""
from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from ..autonn import Tensor, backward, make_optimizer, no_grad
from ..errors import ConfigMismatch, EmptyDataset, IndivisibleInput, NonFiniteLoss, ShapeMismatch, UsageError
from ..ipcore import CvpConfig, compose_ip, project_mask
from ..netbuild import NetConfig, Network, build_ipunet, build_unet2d_slice, build_unet3d
from ..segloss import confusion_table, dice_loss, metrics, tversky_loss
from ..volio import extract_slices, resolve_axis, stack_slices
from .checkpoint import Checkpoint
from .data import Dataset

PIPELINES = ("ip", "slice2d", "vol3d")
BUILDERS = {"ip": build_ipunet, "slice2d": build_unet2d_slice, "vol3d": build_unet3d}


@dataclass(frozen=True)
class HyperParams:
    epochs: int = 1000
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 2
    loss: str = "tversky"
    alpha: float = 0.3
    beta: float = 0.7
    cvp_threshold: float = 130.0
    cvp_mode: str = "eq1-literal"
    axis: object = "sagittal"
    width_factor: float = 0.125
    intensity_scale: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise UsageError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise UsageError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise UsageError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("dice", "tversky"):
            raise UsageError(f"unknown loss {self.loss!r}")
        if self.intensity_scale <= 0:
            raise UsageError("intensity_scale must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @property
    def cvp(self):
        return CvpConfig(self.cvp_threshold, self.cvp_mode)


def default_config(pipeline, hp: HyperParams, num_classes=3) -> NetConfig:
    in_ch = 3 if pipeline == "ip" else 1
    return NetConfig(in_channels=in_ch, num_classes=num_classes, width_factor=hp.width_factor,
                     dims=3 if pipeline == "vol3d" else 2)


def build_network(pipeline, cfg: NetConfig, seed=0) -> Network:
    if pipeline not in PIPELINES:
        raise UsageError(f"unknown pipeline {pipeline!r}; expected one of {PIPELINES}")
    if pipeline == "ip":
        cfg = replace(cfg, in_channels=3, dims=2)
    return BUILDERS[pipeline](cfg, seed=seed)


def samples(pipeline, pairs, hp: HyperParams):
    """Network inputs ``(C, *spatial)`` and label maps for one pipeline.

    ``ip`` yields one projection per volume, ``slice2d`` one item per
    cross-section along the projection axis, ``vol3d`` one item per volume.
    """
    scale = np.float32(hp.intensity_scale)
    out = []
    for vol, mask in pairs:
        axis = resolve_axis(vol, hp.axis)
        if pipeline == "ip":
            x = compose_ip(vol, axis, hp.cvp).channels * scale
            out.append((x, project_mask(mask, axis).labels))
        elif pipeline == "slice2d":
            for img, lab in zip(extract_slices(vol, axis), extract_slices(mask.labels, axis)):
                out.append(((img * scale)[None], lab))
        elif pipeline == "vol3d":
            out.append(((vol.data * scale)[None], mask.labels))
        else:
            raise UsageError(f"unknown pipeline {pipeline!r}")
    return out


def _loss(probs, labels, hp):
    if hp.loss == "dice":
        return dice_loss(probs, labels)
    return tversky_loss(probs, labels, hp.alpha, hp.beta)


def history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "loss", "seconds"])
    for epoch, loss, secs in history:
        w.writerow([epoch, repr(float(loss)), f"{secs:.6f}"])
    return buf.getvalue()


def _state_of(pipeline, net, opt, hp, epoch, rng, history):
    return Checkpoint(
        pipeline=pipeline,
        net_config=net.cfg,
        hyperparams=hp.to_dict(),
        params={k: p.data.copy() for k, p in net.params.items()},
        buffers={k: v.copy() for k, v in net.buffers().items()},
        optimizer={"kind": hp.optimizer, "steps": opt.steps},
        optimizer_state={k: v.copy() for k, v in opt.state_arrays().items()},
        epoch=epoch,
        rng_state=rng.bit_generator.state,
        history=[list(h) for h in history],
        extra={"net_seed": net.seed},
    )


def load_network(ckpt: Checkpoint) -> Network:
    net = build_network(ckpt.pipeline, ckpt.net_config, ckpt.extra.get("net_seed", 0))
    for name, p in net.params.items():
        if name not in ckpt.params or ckpt.params[name].shape != p.shape:
            raise ConfigMismatch(f"checkpoint lacks a matching blob for {name}")
        p.data[...] = ckpt.params[name]
    for name, arr in net.buffers().items():
        if name in ckpt.buffers:
            arr[...] = ckpt.buffers[name]
    return net


def train(pipeline, cfg: NetConfig | None, data: Dataset, hp: HyperParams,
          resume: Checkpoint | None = None, on_epoch=None):
    """Train ``pipeline`` for ``hp.epochs`` epochs; return ``(checkpoint, history)``.

    History rows are ``[epoch, mean_loss, seconds]`` with 1-based epochs.
    With ``resume`` the run continues from the checkpoint's epoch and
    reproduces the uninterrupted run exactly.
    """
    train_pairs = data.train
    if not train_pairs:
        raise EmptyDataset("training split is empty")
    if cfg is None:
        cfg = default_config(pipeline, hp, data.num_classes)
    if resume is not None:
        if resume.pipeline != pipeline:
            raise ConfigMismatch(f"checkpoint is for pipeline {resume.pipeline!r}")
        net = load_network(resume)
    else:
        net = build_network(pipeline, cfg, hp.seed)
    items = samples(pipeline, train_pairs, hp)
    try:
        net.check_input((1,) + items[0][0].shape)
    except (ShapeMismatch, IndivisibleInput) as exc:
        raise ConfigMismatch(str(exc)) from exc

    params = net.parameters()
    kw = {"beta1": hp.beta1, "beta2": hp.beta2, "eps": hp.adam_eps} if hp.optimizer == "adam" else {}
    opt = make_optimizer(hp.optimizer, params, hp.learning_rate, **kw)
    rng = np.random.default_rng([hp.seed, 1])
    history = []
    start = 0
    if resume is not None:
        opt.load_state_arrays(resume.optimizer_state, resume.optimizer.get("steps", 0))
        rng.bit_generator.state = resume.rng_state
        history = [list(h) for h in resume.history]
        start = resume.epoch

    for epoch in range(start, hp.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(items))
        total, batches = 0.0, 0
        for b in range(0, len(order), hp.batch_size):
            idx = order[b : b + hp.batch_size]
            x = Tensor(np.stack([items[i][0] for i in idx]).astype(net.dtype))
            y = np.stack([items[i][1] for i in idx])
            probs = net.forward(x, train=True)
            del x
            loss = _loss(probs, y, hp)
            del probs
            value = float(loss.data)
            if not np.isfinite(value):
                raise NonFiniteLoss(epoch + 1, value)
            backward(loss)
            del loss
            opt.step()
            opt.zero_grad()
            total += value
            batches += 1
        history.append([epoch + 1, total / batches, time.perf_counter() - t0])
        if on_epoch is not None:
            on_epoch(history[-1])
    return _state_of(pipeline, net, opt, hp, hp.epochs if hp.epochs > start else start, rng, history), history


def predict(net: Network, x: np.ndarray) -> np.ndarray:
    """Argmax labels for one input ``(C, *spatial)``."""
    with no_grad():
        probs = net.forward(Tensor(x[None].astype(net.dtype)), train=False)
    return probs.data[0].argmax(axis=0).astype(np.uint8)


def evaluate(ckpt: Checkpoint, data: Dataset, split="test"):
    """Hard-prediction metrics on ``split`` in each pipeline's own space.

    ``ip`` is scored against projected masks; ``slice2d`` re-stacks slice
    predictions into volumes; ``vol3d`` predicts volumes directly.
    """
    pairs = data.subset(split)
    if not pairs:
        raise EmptyDataset(f"{split} split is empty")
    net = load_network(ckpt)
    hp = HyperParams.from_dict(ckpt.hyperparams)
    k = net.cfg.num_classes
    counts = None
    for vol, mask in pairs:
        axis = resolve_axis(vol, hp.axis)
        try:
            if ckpt.pipeline == "slice2d":
                preds = [predict(net, x) for x, _ in samples("slice2d", [(vol, mask)], hp)]
                pred, truth = stack_slices(preds, axis), mask.labels
            else:
                ((x, truth),) = samples(ckpt.pipeline, [(vol, mask)], hp)
                pred = predict(net, x)
        except (ShapeMismatch, IndivisibleInput) as exc:
            raise ConfigMismatch(str(exc)) from exc
        table = confusion_table(pred, truth, k)
        counts = table if counts is None else {c: counts[c] + table[c] for c in table}
    return metrics(counts)
