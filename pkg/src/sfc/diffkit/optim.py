"""Adam optimizer over a ParameterSet."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError
from .params import ParameterSet, load_checkpoint, save_checkpoint


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParameterSet, **kwargs) -> "AdamState":
        state = cls(**kwargs)
        for name, e in params.items():
            state.m[name] = np.zeros(e.values.size)
            state.v[name] = np.zeros(e.values.size)
        return state

    def save(self, path) -> None:
        """Moments go through the checkpoint format; scalars ride along as 1-entry arrays."""
        ps = ParameterSet()
        ps.add("__hyper", (5,), values=[self.learning_rate, self.beta1, self.beta2,
                                         self.epsilon, float(self.step_count)])
        for name in sorted(self.m):
            ps.add("m." + name, (self.m[name].size,), values=self.m[name])
            ps.add("v." + name, (self.v[name].size,), values=self.v[name])
        save_checkpoint(ps, path)

    @classmethod
    def load(cls, path) -> "AdamState":
        ps = load_checkpoint(path)
        lr, b1, b2, eps, steps = ps["__hyper"].values
        state = cls(float(lr), float(b1), float(b2), float(eps), int(steps))
        for name, e in ps.items():
            if name.startswith("m."):
                state.m[name[2:]] = e.values.copy()
            elif name.startswith("v."):
                state.v[name[2:]] = e.values.copy()
        return state


def adam_step(params: ParameterSet, opt: AdamState) -> None:
    """Bias-corrected Adam update from the accumulated grads, then zero the grads.

    Entries whose gradient is identically zero this step keep their values; only
    their moments decay. This keeps unused or ablated parameters fixed.
    """
    if sorted(opt.m) != params.names():
        raise DimensionError("optimizer state does not match parameter names")
    opt.step_count += 1
    t = opt.step_count
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, e in params.items():
        m, v, g = opt.m[name], opt.v[name], e.grads
        if m.shape != e.values.shape:
            raise DimensionError(f"moment shape mismatch for {name!r}")
        m *= b1
        v *= b2
        if not g.any():
            continue
        m += (1.0 - b1) * g
        v += (1.0 - b2) * g * g
        e.values -= opt.learning_rate * (m / c1) / (np.sqrt(v / c2) + opt.epsilon)
        g[:] = 0.0
