"""Binary checkpoints: a JSON manifest, a float32 payload, and a CRC32.

Layout::

    magic "DRCK" | u32 manifest length | manifest JSON (utf-8)
    | payload: concatenated little-endian float32 arrays | u32 CRC32(payload)

The manifest records configs, step counters, the training RNG state, and a
table of (name, shape, byte offset) for every payload array - model
parameters first, then optimizer moments as ``opt.m.<name>`` / ``opt.v.<name>``.

Saving *rounds the live float64 state through float32* (the storage
precision) and writes the rounded values back into the model and optimizer.
After a save, the in-memory state and the on-disk state are identical, so a
run resumed from the file follows the exact trajectory the saving run - had
it kept going - would have followed.  It also makes save -> load -> save
reproduce the file byte for byte.
"""
from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .config import ConfigError, config_to_dict, model_config_from, train_config_from
from .model import DerainModel, ModelConfig
from .training import AdamW, TrainConfig

MAGIC = b"DRCK"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Raised for corrupt, truncated, or incompatible checkpoint files."""


def _quantize_live(arr: np.ndarray) -> np.ndarray:
    """Round float64 data to float32 in place; return the float32 copy."""
    q = arr.astype("<f4")
    arr[...] = q.astype(np.float64)
    return q


def save_checkpoint(
    path: str | Path,
    model: DerainModel,
    *,
    train_cfg: TrainConfig | None = None,
    step: int = 0,
    opt: AdamW | None = None,
    rng_state: dict | None = None,
) -> None:
    entries = []
    chunks = []
    offset = 0

    def put(name: str, live: np.ndarray) -> None:
        nonlocal offset
        q = _quantize_live(live)
        raw = q.tobytes()
        entries.append({"name": name, "shape": list(live.shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)

    named = model.named_parameters()
    for name, p in named:
        put(name, p.data)
    if opt is not None:
        for name, _ in named:
            put(f"opt.m.{name}", opt.m[name])
        for name, _ in named:
            put(f"opt.v.{name}", opt.v[name])

    manifest = {
        "format_version": FORMAT_VERSION,
        "model_config": config_to_dict(model.cfg),
        "train_config": None if train_cfg is None else config_to_dict(train_cfg),
        "step": int(step),
        "opt_step_count": None if opt is None else int(opt.step_count),
        "rng_state": rng_state,
        "params": entries,
    }
    header = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    payload = b"".join(chunks)
    blob = (
        MAGIC
        + struct.pack("<I", len(header))
        + header
        + payload
        + struct.pack("<I", zlib.crc32(payload))
    )
    Path(path).write_bytes(blob)


@dataclasses.dataclass
class Checkpoint:
    """A parsed checkpoint; arrays are float64 copies of the payload."""

    model_config: ModelConfig
    train_config: TrainConfig | None
    step: int
    opt_step_count: int | None
    rng_state: dict | None
    arrays: dict[str, np.ndarray]

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {n: a for n, a in self.arrays.items() if not n.startswith("opt.")}

    def resume_state(self) -> dict:
        """State bundle for ``train_loop(resume=...)``."""
        if self.opt_step_count is None or self.rng_state is None:
            raise CheckpointError("checkpoint holds no optimizer/RNG state to resume from")
        prefix_m, prefix_v = "opt.m.", "opt.v."
        return {
            "step": self.step,
            "opt_step_count": self.opt_step_count,
            "moments_m": {n[len(prefix_m):]: a for n, a in self.arrays.items()
                          if n.startswith(prefix_m)},
            "moments_v": {n[len(prefix_v):]: a for n, a in self.arrays.items()
                          if n.startswith(prefix_v)},
            "rng_state": self.rng_state,
        }


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    (header_len,) = struct.unpack("<I", blob[4:8])
    header_end = 8 + header_len
    if len(blob) < header_end + 4:
        raise CheckpointError(f"{path} is truncated")
    try:
        manifest = json.loads(blob[8:header_end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path} has a corrupt manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format version {manifest.get('format_version')}"
        )
    payload = blob[header_end:-4]
    (crc_stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc_stored:
        raise CheckpointError(f"{path} failed its CRC32 integrity check")

    arrays: dict[str, np.ndarray] = {}
    expected_end = 0
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if start != expected_end or end > len(payload):
            raise CheckpointError(f"{path}: payload table inconsistent at {entry['name']}")
        expected_end = end
        flat = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        arrays[entry["name"]] = flat.astype(np.float64).reshape(shape)
    if expected_end != len(payload):
        raise CheckpointError(f"{path}: payload length does not match the table")

    try:
        model_cfg = model_config_from(manifest["model_config"], "checkpoint model config")
        train_cfg = None
        if manifest["train_config"] is not None:
            train_cfg = train_config_from(manifest["train_config"], "checkpoint train config")
    except ConfigError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc

    return Checkpoint(
        model_config=model_cfg,
        train_config=train_cfg,
        step=int(manifest["step"]),
        opt_step_count=manifest["opt_step_count"],
        rng_state=manifest["rng_state"],
        arrays=arrays,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> DerainModel:
    """Rebuild the model and load its weights; names must match exactly."""
    model = DerainModel(ckpt.model_config, seed=0)
    stored = ckpt.param_arrays()
    live = dict(model.named_parameters())
    missing = sorted(set(live) - set(stored))
    unexpected = sorted(set(stored) - set(live))
    if missing or unexpected:
        raise CheckpointError(
            f"checkpoint does not match the model: missing {missing}, "
            f"unexpected {unexpected}"
        )
    for name, arr in stored.items():
        p = live[name]
        if p.data.shape != arr.shape:
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {arr.shape}, "
                f"model {p.data.shape}"
            )
        p.data[...] = arr
    return model
