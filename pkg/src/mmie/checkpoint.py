"""Checkpoint container: one .npz holding every named tensor plus an
embedded JSON manifest with the model config and tensor shapes."""

from __future__ import annotations

import json

import numpy as np
import torch

from mmie.model import ModelConfig, MultimodalExtractor

_MANIFEST_KEY = "__manifest__"
_TENSOR_PREFIX = "tensor/"


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


def save_checkpoint(path, model: MultimodalExtractor,
                    extra: dict | None = None) -> None:
    state = model.state_dict()
    manifest = {
        "model": model.cfg.to_dict(),
        "tensors": {k: {"shape": list(v.shape),
                        "dtype": str(v.dtype).replace("torch.", "")}
                    for k, v in state.items()},
    }
    if extra:
        manifest["extra"] = extra
    arrays = {_TENSOR_PREFIX + k: v.detach().cpu().numpy()
              for k, v in state.items()}
    with open(path, "wb") as fh:
        np.savez(fh, **{_MANIFEST_KEY: np.array(json.dumps(manifest))}, **arrays)


def read_manifest(path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        if _MANIFEST_KEY not in z.files:
            raise CheckpointError(f"{path}: not a model checkpoint (no manifest)")
        return json.loads(str(z[_MANIFEST_KEY][()]))


def load_checkpoint(path) -> tuple[MultimodalExtractor, dict]:
    """Rebuild the model a checkpoint was saved from, bit-exact weights."""
    with np.load(path, allow_pickle=False) as z:
        if _MANIFEST_KEY not in z.files:
            raise CheckpointError(f"{path}: not a model checkpoint (no manifest)")
        manifest = json.loads(str(z[_MANIFEST_KEY][()]))
        state = {}
        for key in z.files:
            if key.startswith(_TENSOR_PREFIX):
                state[key[len(_TENSOR_PREFIX):]] = torch.from_numpy(z[key])
    declared = manifest.get("tensors", {})
    for name, info in declared.items():
        if name not in state:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        if list(state[name].shape) != info["shape"]:
            raise CheckpointError(
                f"{path}: tensor {name!r} has shape {list(state[name].shape)}, "
                f"manifest says {info['shape']}")
    model = MultimodalExtractor(ModelConfig.from_dict(manifest["model"]))
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: state does not fit model: {exc}") from None
    return model, manifest
