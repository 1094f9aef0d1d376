# --------------------------------------------------------------------
# optim.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Wednesday March 5, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from uvhfield.autodiff import ParamStore
from uvhfield.errors import ConfigurationError, NonFiniteGradientError
from uvhfield.events import EventBus, Events


# --------------------------------------------------------------------
class Schedule:
    EXPONENTIAL = "exponential"
    LINEAR = "linear"

    ALL = (EXPONENTIAL, LINEAR)


# --------------------------------------------------------------------
def lr_at_step(
    step: int,
    total: int,
    start: float = 1e-2,
    end: float = 1e-3,
    schedule: str = Schedule.EXPONENTIAL,
) -> float:
    """
    Learning rate decayed from `start` to `end` over `total` steps.
    Both endpoints are returned exactly.
    """
    if total <= 0:
        return start
    step = min(max(step, 0), total)
    if step == 0:
        return start
    if step == total:
        return end
    frac = step / total
    match schedule:
        case Schedule.EXPONENTIAL:
            return start * (end / start) ** frac
        case Schedule.LINEAR:
            return start + (end - start) * frac
        case _:
            raise ConfigurationError("train.schedule", f"unknown schedule {schedule!r}")


# --------------------------------------------------------------------
@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def moments(self, name: str, like: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if name not in self.m:
            self.m[name] = np.zeros_like(like)
            self.v[name] = np.zeros_like(like)
        return self.m[name], self.v[name]

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {"adam.step": np.array(self.step, dtype=np.int64)}
        for name in self.m:
            state[f"adam.m.{name}"] = self.m[name]
            state[f"adam.v.{name}"] = self.v[name]
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]):
        self.step = int(state.get("adam.step", 0))
        for key, value in state.items():
            if key.startswith("adam.m."):
                self.m[key[len("adam.m."):]] = np.array(value)
            elif key.startswith("adam.v."):
                self.v[key[len("adam.v."):]] = np.array(value)


# --------------------------------------------------------------------
def adam_step(
    params: ParamStore,
    state: AdamState,
    lr: float,
    lr_scale: Optional[dict[str, float]] = None,
) -> ParamStore:
    """
    Apply one bias-corrected Adam update to every parameter and zero the
    gradients afterwards.  `lr_scale` multiplies the learning rate of
    whole parameter groups.

    A non-finite gradient aborts the step before any parameter is
    touched.
    """
    for name, tensor in params.items():
        if tensor.grad is not None and not np.all(np.isfinite(tensor.grad)):
            EventBus.get().emit(
                Events.DIAGNOSTIC, "adam", {"nonfinite_gradient": name, "step": state.step}
            )
            raise NonFiniteGradientError(name)

    lr_scale = lr_scale or {}
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step

    for name, tensor in params.items():
        g = tensor.grad
        if g is None:
            continue
        m, v = state.moments(name, tensor.data)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        step_size = lr * lr_scale.get(params.group_of(name), 1.0) / bc1
        denom = np.sqrt(v / bc2) + state.eps
        tensor.data -= (step_size * m / denom).astype(tensor.dtype, copy=False)

    params.zero_grad()
    return params
