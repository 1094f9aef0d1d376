# --------------------------------------------------------------------
# checkpoint.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Monday March 10, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from uvhfield.autodiff import ParamStore
from uvhfield.container import read_container, write_container
from uvhfield.errors import CheckpointMismatchError
from uvhfield.events import EventBus, Events
from uvhfield.field import FieldConfig, FieldParams
from uvhfield.optim import AdamState
from uvhfield.typedefs import JsonDict, PathSpec

# --------------------------------------------------------------------
CHECKPOINT_KIND = "field-checkpoint"
PARAM_PREFIX = "param."


# --------------------------------------------------------------------
@dataclass
class Checkpoint:
    params: FieldParams
    adam: AdamState
    step: int = 0
    config_hash: str = ""
    dataset_hash: str = ""
    extra: JsonDict = field(default_factory=dict)


# --------------------------------------------------------------------
def save_checkpoint(path: PathSpec, ckpt: Checkpoint) -> Path:
    meta = {
        "step": ckpt.step,
        "config_hash": ckpt.config_hash,
        "dataset_hash": ckpt.dataset_hash,
        "field_config": ckpt.params.cfg.to_dict(),
        "dtype": np.dtype(ckpt.params.store.dtype).name,
        "extra": ckpt.extra,
    }
    arrays = {PARAM_PREFIX + k: v for k, v in ckpt.params.store.state_dict().items()}
    arrays.update(ckpt.adam.state_dict())
    path = write_container(path, CHECKPOINT_KIND, meta, arrays)
    EventBus.get().emit(Events.CHECKPOINT, "checkpoint", str(path))
    return path


# --------------------------------------------------------------------
def load_checkpoint(
    path: PathSpec,
    config_hash: Optional[str] = None,
    dataset_hash: Optional[str] = None,
    force: bool = False,
) -> Checkpoint:
    """
    Load a checkpoint, refusing one written under a different model
    configuration or dataset unless `force` is given.
    """
    meta, arrays = read_container(path, CHECKPOINT_KIND)
    for what, expected in (("config", config_hash), ("dataset", dataset_hash)):
        found = meta.get(f"{what}_hash", "")
        if expected is not None and found != expected:
            if not force:
                raise CheckpointMismatchError(what, expected, found)
            EventBus.get().emit(
                Events.WARNING, "checkpoint", f"{what} hash mismatch overridden for {path}"
            )

    cfg = FieldConfig.from_dict(meta["field_config"])
    store = ParamStore(np.dtype(meta.get("dtype", "float32")))
    params = FieldParams(cfg, store)
    for name, value in arrays.items():
        if name.startswith(PARAM_PREFIX):
            store.add(name[len(PARAM_PREFIX):], value)
    adam = AdamState()
    adam.load_state_dict({k: v for k, v in arrays.items() if k.startswith("adam.")})
    return Checkpoint(
        params=params,
        adam=adam,
        step=int(meta.get("step", 0)),
        config_hash=meta.get("config_hash", ""),
        dataset_hash=meta.get("dataset_hash", ""),
        extra=meta.get("extra", {}),
    )
