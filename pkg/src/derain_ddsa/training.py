"""Training: L1 objective, Adam with decoupled weight decay, the LR
schedule, flip augmentation, and a deterministic training loop.

Determinism contract: given the same config, dataset, and seed, the loop
produces bitwise-identical losses, parameters, and checkpoints.  Saving a
checkpoint rounds the live float64 parameters and moments through float32
(the storage precision), so a resumed run continues from exactly the state
an uninterrupted run had after writing that same checkpoint.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor
from . import tensor as T
from .model import DerainModel


@dataclass
class TrainConfig:
    """Optimization hyperparameters; defaults are the desk-scale preset."""

    lr: float = 1e-4
    total_steps: int = 300
    fixed_lr_steps: int = 100
    batch_size: int = 2
    patch_size: int = 32
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-4
    adam_eps: float = 1e-8
    seed: int = 0
    flip_augment: bool = True
    checkpoint_every: int = 0      # 0 = write only the final checkpoint

    def __post_init__(self):
        self.betas = tuple(self.betas)

    def validate(self) -> None:
        if self.lr <= 0.0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0 <= self.fixed_lr_steps <= self.total_steps:
            raise ValueError(
                f"fixed_lr_steps must lie in [0, total_steps], got "
                f"{self.fixed_lr_steps} with total_steps={self.total_steps}"
            )
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patch_size < 1:
            raise ValueError(f"patch_size must be >= 1, got {self.patch_size}")
        b1, b2 = self.betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {self.betas}")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.adam_eps <= 0.0:
            raise ValueError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.checkpoint_every < 0:
            raise ValueError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")


def paper_train_config() -> TrainConfig:
    """Full-scale schedule (reference only; far beyond desk runtimes)."""
    return TrainConfig(
        lr=1e-4,
        total_steps=300_000,
        fixed_lr_steps=92_000,
        batch_size=16,
        patch_size=128,
    )


class TrainingDiverged(RuntimeError):
    """Raised when the loss leaves the finite floats; carries the step index."""

    def __init__(self, step: int, value: float):
        super().__init__(f"loss became non-finite ({value}) at step {step}")
        self.step = step
        self.value = value


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over every element."""
    return T.reduce_mean(T.absolute(T.sub(pred, target)))


def lr_at(step: int, cfg: TrainConfig) -> float:
    """LR schedule: flat for fixed_lr_steps, then one cosine decay to ~0."""
    if not 0 <= step < cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps})")
    if step < cfg.fixed_lr_steps:
        return cfg.lr
    span = cfg.total_steps - cfg.fixed_lr_steps
    progress = (step - cfg.fixed_lr_steps) / span
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Adam with decoupled weight decay over a named parameter list.

    Decay multiplies each parameter by (1 - lr * weight_decay) before the
    moment update, so with zero gradient the decay factor is applied exactly.
    Moments are kept per parameter name so they can be checkpointed.
    """

    def __init__(self, named_params: list[tuple[str, Tensor]], cfg: TrainConfig):
        self.named_params = list(named_params)
        self.cfg = cfg
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def step(self, lr: float) -> None:
        b1, b2 = self.cfg.betas
        wd = self.cfg.weight_decay
        eps = self.cfg.adam_eps
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - b1 ** t
        bc2 = 1.0 - b2 ** t
        for name, p in self.named_params:
            if wd:
                p.data *= 1.0 - lr * wd
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * (g * g)
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---------------------------------------------------------------------------
# batch assembly
# ---------------------------------------------------------------------------


def random_crop(
    rainy: np.ndarray, clean: np.ndarray, patch: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Take the same random patch from both images of a pair ([c, h, w])."""
    _, h, w = rainy.shape
    if h < patch or w < patch:
        raise ValueError(f"image {h}x{w} smaller than patch {patch}")
    oy = int(rng.integers(0, h - patch + 1))
    ox = int(rng.integers(0, w - patch + 1))
    return (
        rainy[:, oy:oy + patch, ox:ox + patch],
        clean[:, oy:oy + patch, ox:ox + patch],
    )


def augment_flip(
    rainy: np.ndarray, clean: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Flip both images of a pair together, each axis with probability 1/2."""
    if rng.random() < 0.5:
        rainy, clean = rainy[:, :, ::-1], clean[:, :, ::-1]
    if rng.random() < 0.5:
        rainy, clean = rainy[:, ::-1, :], clean[:, ::-1, :]
    return np.ascontiguousarray(rainy), np.ascontiguousarray(clean)


def assemble_batch(
    pairs, cfg: TrainConfig, rng: np.random.Generator
) -> tuple[Tensor, Tensor]:
    """Sample, crop, and augment a training batch; returns (rainy, clean)."""
    idx = rng.integers(0, len(pairs), size=cfg.batch_size)
    xs, ys = [], []
    for i in idx:
        pair = pairs[int(i)]
        r, c = random_crop(pair.rainy, pair.clean, cfg.patch_size, rng)
        if cfg.flip_augment:
            r, c = augment_flip(r, c, rng)
        xs.append(r)
        ys.append(c)
    return Tensor(np.stack(xs)), Tensor(np.stack(ys))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


def train_loop(
    model: DerainModel,
    pairs,
    cfg: TrainConfig,
    *,
    out_dir: Path | None = None,
    resume: dict | None = None,
    on_step=None,
) -> list[tuple[int, float, float]]:
    """Run (or continue) training; returns (step, lr, loss) rows produced.

    ``resume`` is the state dict a checkpoint load yields: step count,
    optimizer moments, and the batch RNG state.  Checkpoints are written to
    ``out_dir`` every ``checkpoint_every`` steps and always at the end;
    writing one rounds the live state through float32 (see module docstring).
    A non-finite loss aborts with :class:`TrainingDiverged`.
    """
    cfg.validate()
    if not pairs:
        raise ValueError("training needs at least one image pair")
    opt = AdamW(model.named_parameters(), cfg)
    rng = np.random.default_rng(cfg.seed)
    start_step = 0
    if resume is not None:
        start_step = resume["step"]
        opt.step_count = resume["opt_step_count"]
        for name in opt.m:
            opt.m[name][...] = resume["moments_m"][name]
            opt.v[name][...] = resume["moments_v"][name]
        rng.bit_generator.state = resume["rng_state"]

    def save(step: int, path: Path) -> None:
        from .checkpoint import save_checkpoint  # deferred: checkpoint imports model

        save_checkpoint(
            path, model, train_cfg=cfg, step=step, opt=opt,
            rng_state=rng.bit_generator.state,
        )

    rows: list[tuple[int, float, float]] = []
    for step in range(start_step, cfg.total_steps):
        lr = lr_at(step, cfg)
        x, y = assemble_batch(pairs, cfg, rng)
        model.zero_grads()
        # divergence is detected explicitly below; suppress the overflow
        # warnings a dying run would otherwise spray
        with np.errstate(all="ignore"), T.Tape():
            pred = model.forward(x)
            loss = l1_loss(pred, y)
            T.backward(loss)
        loss_val = loss.data.item()
        if not math.isfinite(loss_val):
            raise TrainingDiverged(step, loss_val)
        with np.errstate(all="ignore"):
            opt.step(lr)
        rows.append((step, lr, loss_val))
        if on_step is not None:
            on_step(step, lr, loss_val)
        done = step + 1
        if (
            out_dir is not None
            and cfg.checkpoint_every
            and done % cfg.checkpoint_every == 0
            and done < cfg.total_steps
        ):
            save(done, Path(out_dir) / f"ckpt_{done}.bin")
    if out_dir is not None:
        save(cfg.total_steps, Path(out_dir) / f"ckpt_{cfg.total_steps}.bin")
    return rows
