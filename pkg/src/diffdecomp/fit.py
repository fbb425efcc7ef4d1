"""Finite-difference fitting of the parameter bundle.

Gradients are central finite differences over a packed parameter vector;
the optimiser is plain gradient descent with a fixed learning rate.  Only the
selected parameter groups enter the vector, everything else stays frozen, and
a hard cap on the vector length keeps the scheme honest (it is meant for
small bundles, not deep training).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError
from .objective import LossReport
from .params import ModelParams, _leaves, copy_params

__all__ = [
    "FitConfig",
    "FitResult",
    "FitError",
    "FitDivergedError",
    "PARAMETER_GROUPS",
    "pack_params",
    "apply_theta",
    "fd_gradient",
    "fit",
    "fit_model",
]

PARAMETER_GROUPS = {
    "steps": ("alpha", "beta", "gamma"),
    "coupling": ("phi_c", "phi_n"),
    "injection": ("psi_c", "psi_n"),
    "memory": (
        "mem_c_w_z", "mem_c_w_r", "mem_c_w_c",
        "mem_n_w_z", "mem_n_w_r", "mem_n_w_c",
    ),
    "memory_bias": (
        "mem_c_b_z", "mem_c_b_r", "mem_c_b_c",
        "mem_n_b_z", "mem_n_b_r", "mem_n_b_c",
    ),
    "gate": ("gate_scale", "gate_shift"),
    "gate_reducer": ("gate_reducer",),
    "head": ("head_weights", "head_bias"),
    "align": (
        "align_eta_a", "align_eta_h", "align_eta_v", "align_eta_d",
        "align_psi_a", "align_psi_h", "align_psi_v", "align_psi_d",
    ),
}


class FitError(RuntimeError):
    """A loss or gradient evaluation produced a non-finite value."""


class FitDivergedError(FitError):
    """An iteration increased the loss by more than the alarm factor."""


@dataclass(frozen=True)
class FitConfig:
    learning_rate: float = 0.05
    iterations: int = 300
    step_size: float = 1e-4          # finite-difference half-step
    groups: tuple = ("steps", "gate", "head", "memory_bias")
    max_parameters: int = 2000
    divergence_factor: float = 10.0


@dataclass(frozen=True)
class FitResult:
    params: ModelParams
    theta: np.ndarray
    curve: tuple  # LossReport per recorded iterate (index 0 = initial)

    @property
    def initial(self) -> LossReport:
        return self.curve[0]

    @property
    def final(self) -> LossReport:
        return self.curve[-1]


def _selected_leaves(params: ModelParams, groups):
    names = []
    for g in groups:
        if g not in PARAMETER_GROUPS:
            raise ConfigError(f"unknown parameter group {g!r}; know {sorted(PARAMETER_GROUPS)}")
        names.extend(PARAMETER_GROUPS[g])
    byname = {leaf[0]: leaf for leaf in _leaves(params)}
    return [byname[n] for n in names]


def pack_params(params: ModelParams, groups) -> np.ndarray:
    """Selected groups flattened into one float64 vector (fixed order)."""
    pieces = []
    for _name, get, _set, kind in _selected_leaves(params, groups):
        value = get(params)
        if kind == "scalar":
            pieces.append(np.array([float(value)]))
        else:
            pieces.append(np.asarray(value, dtype=np.float64).ravel())
    if not pieces:
        return np.zeros(0)
    return np.concatenate(pieces)


def apply_theta(params: ModelParams, groups, theta) -> ModelParams:
    """A fresh bundle with the selected groups replaced by ``theta``."""
    theta = np.asarray(theta, dtype=np.float64)
    out = copy_params(params)
    offset = 0
    for _name, get, set_, kind in _selected_leaves(out, groups):
        if kind == "scalar":
            set_(out, float(theta[offset]))
            offset += 1
        else:
            shape = np.asarray(get(out)).shape
            size = int(np.prod(shape))
            set_(out, theta[offset : offset + size].reshape(shape).copy())
            offset += size
    if offset != theta.size:
        raise ConfigError(f"theta has {theta.size} entries, selection needs {offset}")
    return out


def fd_gradient(loss_fn, theta, step_size: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function of a vector.

    Raises :class:`FitError` naming the coordinate if an evaluation is
    non-finite.
    """
    theta = np.asarray(theta, dtype=np.float64)
    h = float(step_size)
    if h <= 0.0:
        raise ConfigError(f"step_size must be positive, got {h}")
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        up = theta.copy()
        up[i] += h
        down = theta.copy()
        down[i] -= h
        f_up = float(loss_fn(up))
        f_down = float(loss_fn(down))
        if not (np.isfinite(f_up) and np.isfinite(f_down)):
            raise FitError(f"non-finite loss at coordinate {i} (+{h}: {f_up}, -{h}: {f_down})")
        grad[i] = (f_up - f_down) / (2.0 * h)
    return grad


def fit(report_fn, theta0, config: FitConfig = FitConfig()):
    """Plain gradient descent on ``report_fn(theta).total``.

    Returns (theta, curve of LossReports, one per recorded iterate).  A step
    that multiplies the loss by more than ``divergence_factor`` raises
    :class:`FitDivergedError` (the divergence alarm).
    """
    theta = np.asarray(theta0, dtype=np.float64).copy()
    if theta.size > config.max_parameters:
        raise ConfigError(
            f"{theta.size} parameters exceed the fit cap of {config.max_parameters}"
        )

    def total(th):
        return report_fn(th).total

    report = report_fn(theta)
    if not np.isfinite(report.total):
        raise FitError(f"initial loss is non-finite: {report.total}")
    curve = [report]
    for it in range(int(config.iterations)):
        grad = fd_gradient(total, theta, config.step_size)
        theta = theta - config.learning_rate * grad
        report = report_fn(theta)
        if not np.isfinite(report.total):
            raise FitError(f"non-finite loss after iteration {it}")
        previous = curve[-1].total
        if report.total > config.divergence_factor * previous + 1e-9:
            raise FitDivergedError(
                f"iteration {it}: loss rose from {previous:.6g} to {report.total:.6g}"
            )
        curve.append(report)
    return theta, tuple(curve)


def fit_model(params: ModelParams, report_of_params, config: FitConfig = FitConfig()) -> FitResult:
    """Fit the selected groups of a bundle against a LossReport-valued objective."""
    theta0 = pack_params(params, config.groups)

    def report_fn(theta):
        return report_of_params(apply_theta(params, config.groups, theta))

    theta, curve = fit(report_fn, theta0, config)
    return FitResult(params=apply_theta(params, config.groups, theta), theta=theta, curve=curve)
