"""Loss gradient by forward sensitivities carried through segments and events."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import GrazingEventError, InvalidArgumentError
from .model import ModelSpec
from .simulator import SimConfig, simulate
from .targets import HARD, BlendConfig, TargetSet, loss_and_gradient, predict


def gradient_forward(model: ModelSpec, p_opt, targets: TargetSet, cfg: Optional[SimConfig] = None,
                     blend: BlendConfig = HARD, T: Optional[float] = None, return_traj: bool = False):
    """``(loss, grad)`` with respect to the optimized parameters.

    Saturated trajectories give ``(inf, zeros)``.  A tangential guard crossing
    raises GrazingEventError carrying the (finite) loss.
    """
    if targets.data is None:
        raise InvalidArgumentError("targets carry no data", operation="gradient_forward")
    p = model.full_params(p_opt)
    traj = simulate(model, p, T, cfg, sensitivities=True)
    if traj.saturated:
        out = (float("inf"), np.zeros(model.dims.n_opt))
        return (*out, traj) if return_traj else out
    if traj.sensitivity_error is not None:
        J, _ = loss_and_gradient(predict(model, traj, targets, blend), targets.data)
        raise GrazingEventError(traj.sensitivity_error, operation="gradient_forward", loss=J)
    J, grad = loss_and_gradient(predict(model, traj, targets, blend, with_sens=True), targets.data)
    return (J, grad, traj) if return_traj else (J, grad)


def loss_rk(model: ModelSpec, p_opt, targets: TargetSet, cfg: Optional[SimConfig] = None,
            blend: BlendConfig = HARD, T: Optional[float] = None) -> float:
    """Loss of the explicit-RK simulation without sensitivities (inf when saturated)."""
    p = model.full_params(p_opt)
    traj = simulate(model, p, T, cfg)
    if traj.saturated:
        return float("inf")
    J, _ = loss_and_gradient(predict(model, traj, targets, blend), targets.data)
    return J
