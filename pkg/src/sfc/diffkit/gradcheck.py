"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import NumericError
from .params import ParameterSet
from .tensor import Tensor, backward

# Absolute differences below this scale are treated as agreement; central
# differences at h=1e-5 carry ~1e-11 cancellation noise on O(1) losses.
DENOM_FLOOR = 1e-7


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str | None
    worst_index: int | None
    tolerance: float
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), DENOM_FLOOR)
    return np.abs(analytic - numeric) / denom


def grad_check(closure: Callable[[], Tensor], params: ParameterSet, tolerance: float = 1e-4,
               h: float = 1e-5, names=None) -> GradCheckReport:
    """Compare backward() gradients of ``closure()`` with central differences.

    ``closure`` must rebuild the forward pass from the current parameter values
    and return a scalar Tensor. Only ``names`` (default: all entries) are probed.
    Gradients already accumulated in ``params`` are cleared.
    """
    names = params.names() if names is None else list(names)
    params.zero_grad()
    loss = closure()
    if not np.isfinite(loss.value).all():
        raise NumericError("non-finite loss at the unperturbed point")
    backward(loss)
    analytic = {n: params[n].grads.copy() for n in names}
    params.zero_grad()

    report = GradCheckReport(0.0, None, None, tolerance)
    for name in names:
        entry = params[name]
        if not np.isfinite(entry.values).all():
            raise NumericError(f"non-finite values in parameter {name!r}")
        numeric = np.empty(entry.values.size)
        for i in range(entry.values.size):
            orig = entry.values[i]
            entry.values[i] = orig + h
            up = float(closure().value)
            entry.values[i] = orig - h
            down = float(closure().value)
            entry.values[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while perturbing {name!r}[{i}]")
            numeric[i] = (up - down) / (2.0 * h)
        if not np.isfinite(analytic[name]).all():
            raise NumericError(f"non-finite analytic gradient for {name!r}")
        err = relative_error(analytic[name], numeric)
        worst = int(np.argmax(err)) if err.size else 0
        report.per_param[name] = float(err[worst]) if err.size else 0.0
        if err.size and err[worst] > report.max_rel_error:
            report.max_rel_error = float(err[worst])
            report.worst_param, report.worst_index = name, worst
    return report
