"""Train a small model end to end and watch it learn to remove rain.

Run:  python3 demos/04_train_tiny.py       (about a minute on one core)
Writes demos/out/tiny.ckpt and before/after PNGs.
"""
import time
from pathlib import Path

import numpy as np

from derain_ddsa.checkpoint import save_checkpoint
from derain_ddsa.data import make_dataset
from derain_ddsa.image_io import save_image
from derain_ddsa.metrics import psnr, rgb_to_y, ssim
from derain_ddsa.model import DerainModel, ModelConfig
from derain_ddsa.tensor import Tensor, no_grad
from derain_ddsa.training import TrainConfig, train_loop

out_dir = Path(__file__).parent / "out"
out_dir.mkdir(exist_ok=True)

print("=== 1. Setup ===")
print("One heavily rained scene, overfit on purpose: the fastest honest way")
print("to watch the whole stack (attention, FFN, U-Net, Adam) do its job.")
model_cfg = ModelConfig(base_channels=12, depths=(1, 1, 1), heads=(1, 1, 2))
train_cfg = TrainConfig(lr=5e-4, total_steps=200, fixed_lr_steps=100,
                        batch_size=1, patch_size=24, flip_augment=False, seed=0)
pairs = make_dataset(np.random.default_rng(1), 1, 24, 24, severity=0.9)
model = DerainModel(model_cfg, seed=train_cfg.seed)
n_params = sum(p.data.size for _, p in model.named_parameters())
print(f"model: base {model_cfg.base_channels} ch, {model_cfg.levels} scale(s), "
      f"{n_params} parameters")
print(f"data : {len(pairs)} synthetic pair(s), {train_cfg.total_steps} steps")

print()
print("=== 2. Training ===")
t0 = time.time()
milestones = {0, 25, 50, 100, 150, train_cfg.total_steps - 1}


def on_step(step, lr, loss):
    if step in milestones:
        print(f"  step {step:3d}  lr {lr:.2e}  L1 {loss:.5f}")


rows = train_loop(model, pairs, train_cfg, on_step=on_step)
print(f"  done in {time.time() - t0:.1f}s; "
      f"loss {rows[0][2]:.5f} -> {rows[-1][2]:.5f}")

print()
print("=== 3. Before / after on the training pair ===")
rainy, clean = pairs[0].rainy, pairs[0].clean
with no_grad():
    restored = np.clip(model.forward(Tensor(rainy[None])).data[0], 0.0, 1.0)
yr, yc, yo = rgb_to_y(rainy), rgb_to_y(clean), rgb_to_y(restored)
print(f"  rainy    vs clean: PSNR {psnr(yr, yc):6.2f} dB   SSIM {ssim(yr, yc):.4f}")
print(f"  restored vs clean: PSNR {psnr(yo, yc):6.2f} dB   SSIM {ssim(yo, yc):.4f}")
save_image(out_dir / "tiny_rainy.png", rainy)
save_image(out_dir / "tiny_clean.png", clean)
save_image(out_dir / "tiny_restored.png", restored)

print()
print("=== 4. Persist for the evaluation demo ===")
save_checkpoint(out_dir / "tiny.ckpt", model, train_cfg=train_cfg,
                step=train_cfg.total_steps)
print(f"  wrote {out_dir / 'tiny.ckpt'}")
print("(the CLI equivalent is: derain-ddsa train --config cfg.json "
      "--data DIR --out DIR)")
