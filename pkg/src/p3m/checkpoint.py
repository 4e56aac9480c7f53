"""Checkpoint archive: a single .npz of named parameter arrays plus a JSON
config header, so checkpoints are readable without unpickling anything."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

_CONFIG_KEY = "__config_json__"
_PARAM = "param/"
_OPT = "opt/"
_META = "meta/"


def _to_bytes_array(doc: dict) -> np.ndarray:
    return np.frombuffer(json.dumps(doc).encode("utf-8"), dtype=np.uint8).copy()


def _from_bytes_array(arr: np.ndarray) -> dict:
    return json.loads(arr.tobytes().decode("utf-8"))


def save_checkpoint(
    path: str | Path,
    model: torch.nn.Module,
    config: dict,
    optimizer: torch.optim.Optimizer | None = None,
    meta: dict | None = None,
) -> None:
    arrays: dict[str, np.ndarray] = {_CONFIG_KEY: _to_bytes_array(config)}
    for name, tensor in model.state_dict().items():
        arrays[_PARAM + name] = tensor.detach().cpu().numpy()
    if optimizer is not None:
        state = optimizer.state_dict()
        arrays[_OPT + "param_groups"] = _to_bytes_array({"param_groups": state["param_groups"]})
        for pid, slots in state["state"].items():
            for key, val in slots.items():
                arr = val.detach().cpu().numpy() if torch.is_tensor(val) else np.asarray(val)
                arrays[f"{_OPT}state/{pid}/{key}"] = arr
    for key, val in (meta or {}).items():
        arrays[_META + key] = np.asarray(val)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        np.savez(f, **arrays)
    tmp.replace(path)


def load_checkpoint(path: str | Path):
    """Returns (config, state_dict, optimizer_state or None, meta)."""
    with np.load(path, allow_pickle=False) as z:
        config = _from_bytes_array(z[_CONFIG_KEY])
        state_dict = {}
        opt_state: dict = {"state": {}, "param_groups": None}
        meta = {}
        for key in z.files:
            if key.startswith(_PARAM):
                state_dict[key[len(_PARAM):]] = torch.from_numpy(z[key].copy())
            elif key == _OPT + "param_groups":
                opt_state["param_groups"] = _from_bytes_array(z[key])["param_groups"]
            elif key.startswith(_OPT + "state/"):
                _, _, pid, slot = key.split("/", 3)
                entry = opt_state["state"].setdefault(int(pid), {})
                arr = z[key]
                entry[slot] = torch.from_numpy(arr.copy()) if arr.ndim else torch.tensor(arr.item())
            elif key.startswith(_META):
                meta[key[len(_META):]] = z[key]
    optimizer_state = opt_state if opt_state["param_groups"] is not None else None
    return config, state_dict, optimizer_state, meta
