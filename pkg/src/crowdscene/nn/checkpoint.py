"""Model checkpoints: a multi-record CSTF file plus a JSON sidecar.

``<stem>.cstf`` holds every trainable tensor followed by every BN running
statistic, in the order listed in ``<stem>.json``::

    {"format": "crowdscene-checkpoint/1", "name": ..., "kind": "mel",
     "architecture": {...}, "tensors": [{"name", "group", "shape"}, ...],
     "normalization": {"mean": [...], "std": [...]} | null,
     "train_config": {...}, "epoch": int, "loss": float}
"""

import json
from pathlib import Path

import numpy as np

from crowdscene import cstf
from crowdscene.dsp import Standardizer
from crowdscene.nn.vgg import Architecture, Vgg15Params

FORMAT = "crowdscene-checkpoint/1"


class CheckpointError(ValueError):
    pass


def _paths(path):
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".cstf", ".json") else p
    return stem.with_suffix(".cstf"), stem.with_suffix(".json")


def save_checkpoint(path, framework, **meta):
    tensor_path, json_path = _paths(path)
    tensor_path.parent.mkdir(parents=True, exist_ok=True)
    model = framework.model
    entries, arrays = [], []
    for group, tensors in (("params", model.params), ("stats", model.stats)):
        for name, arr in tensors.items():
            entries.append({"name": name, "group": group, "shape": list(arr.shape)})
            arrays.append(arr)
    cstf.write_tensors(tensor_path, arrays)
    std = framework.standardizer
    sidecar = {
        "format": FORMAT,
        "name": framework.name,
        "kind": framework.kind,
        "architecture": model.arch.to_dict(),
        "tensors": entries,
        "normalization": None if std is None else {"mean": np.asarray(std.mean).tolist(),
                                                  "std": np.asarray(std.std).tolist()},
        **meta,
    }
    json_path.write_text(json.dumps(sidecar, indent=1))
    return tensor_path, json_path


def load_checkpoint(path):
    """Returns ``(Framework, sidecar_dict)``."""
    from crowdscene.pipeline import Framework

    tensor_path, json_path = _paths(path)
    try:
        sidecar = json.loads(json_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint sidecar {json_path}: {exc}") from None
    if sidecar.get("format") != FORMAT:
        raise CheckpointError(f"{json_path}: unknown checkpoint format {sidecar.get('format')!r}")
    arrays = cstf.read_tensors(tensor_path)
    entries = sidecar["tensors"]
    if len(arrays) != len(entries):
        raise CheckpointError(f"{tensor_path}: {len(arrays)} tensors, sidecar lists {len(entries)}")
    params, stats = {}, {}
    for entry, arr in zip(entries, arrays):
        if list(arr.shape) != entry["shape"]:
            raise CheckpointError(f"tensor {entry['name']} has shape {arr.shape}")
        (params if entry["group"] == "params" else stats)[entry["name"]] = arr
    model = Vgg15Params(Architecture.from_dict(sidecar["architecture"]), params, stats)
    norm = sidecar.get("normalization")
    std = None if norm is None else Standardizer(np.array(norm["mean"]), np.array(norm["std"]))
    return Framework(sidecar["name"], sidecar["kind"], model, std), sidecar
