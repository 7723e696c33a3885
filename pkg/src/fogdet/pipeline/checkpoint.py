"""Versioned, config-hashed training checkpoints."""
from __future__ import annotations

import pickle
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import torch

from ..core import FogDetError

FORMAT_VERSION = 1


class CheckpointError(FogDetError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointConfigError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: dict
    config_hash: str
    student: dict
    teacher: Optional[dict] = None
    optimizer: Optional[dict] = None
    epoch: int = 0
    history: dict = field(default_factory=dict)
    rng_state: Optional[dict] = None
    version: int = FORMAT_VERSION


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": ckpt.version,
        "config": ckpt.config,
        "config_hash": ckpt.config_hash,
        "student": ckpt.student,
        "teacher": ckpt.teacher,
        "optimizer": ckpt.optimizer,
        "epoch": ckpt.epoch,
        "history": ckpt.history,
        "rng_state": ckpt.rng_state,
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path, expected_hash: Optional[str] = None) -> Checkpoint:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except (RuntimeError, EOFError, pickle.UnpicklingError, zipfile.BadZipFile, ValueError, OSError) as exc:
        raise CorruptCheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CorruptCheckpointError(f"{path} is not a checkpoint")
    if payload["format_version"] != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint format {payload['format_version']} unsupported (expected {FORMAT_VERSION})")
    if expected_hash is not None and payload["config_hash"] != expected_hash:
        raise CheckpointConfigError(
            f"checkpoint config hash {payload['config_hash']} does not match {expected_hash}")
    return Checkpoint(payload["config"], payload["config_hash"], payload["student"], payload.get("teacher"),
                      payload.get("optimizer"), payload.get("epoch", 0), payload.get("history", {}),
                      payload.get("rng_state"), payload["format_version"])
