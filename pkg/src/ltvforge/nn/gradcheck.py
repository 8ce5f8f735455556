from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Sequence

import numpy as np

from ..exceptions import ConfigurationError, NumericalError
from .params import ParamSet

LossAndGrad = Callable[[ParamSet], tuple[float | Sequence[float], dict[str, np.ndarray]]]


def _terms(loss) -> list[float]:
    return [float(loss)] if np.ndim(loss) == 0 else [float(t) for t in loss]


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def grad_check(params: ParamSet, loss_and_grad: LossAndGrad, eps: float = 1e-5,
               max_params: int = 5000, names: Iterable[str] | None = None,
               corrupt: float = 1.0) -> tuple[float, dict[str, float]]:
    """Compare analytic gradients with central finite differences.

    ``loss_and_grad(params)`` must be a pure function of ``params`` returning
    the loss and a dict of analytic gradients. The loss may also be a sequence
    of additive terms; the difference quotient is then formed term by term so
    that a large constant term does not swamp a small one in rounding. Returns the worst relative error
    and the worst error per parameter tensor. ``corrupt`` scales the analytic
    gradient and exists only for the planted-bug self test.
    """
    names = list(params.values) if names is None else list(names)
    total = sum(params[n].size for n in names)
    if total > max_params:
        raise ConfigurationError(f"{total} parameters exceed the grad-check cap of {max_params}")
    loss, analytic = loss_and_grad(params)
    if not np.isfinite(sum(_terms(loss))):
        raise NumericalError("grad check: loss is not finite")
    analytic = {n: np.array(analytic[n], dtype=np.float64) * corrupt for n in names}

    per_tensor: dict[str, float] = {}
    for name in names:
        theta = params.values[name]
        flat = theta.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = _terms(loss_and_grad(params)[0])
            flat[i] = orig - eps
            down = _terms(loss_and_grad(params)[0])
            flat[i] = orig
            if not (np.isfinite(sum(up)) and np.isfinite(sum(down))):
                raise NumericalError(f"grad check: non-finite loss while perturbing {name}[{i}]")
            numeric[i] = math.fsum(u - d for u, d in zip(up, down)) / (2.0 * eps)
        err = relative_error(analytic[name].reshape(-1), numeric)
        per_tensor[name] = float(err.max()) if err.size else 0.0
    worst = max(per_tensor.values(), default=0.0)
    return worst, per_tensor
