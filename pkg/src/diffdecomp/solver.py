"""K-step unrolled refinement of a difference-field decomposition.

The solver maintains a change estimate C, a nuisance estimate N, and one
recurrent memory per branch.  One step, given the input field D:

1. residual ``R = D - (C + N)``
2. coupled drafts ``dC = conv3x3(phi_c, [C, N, R])`` and likewise ``dN``
   (reflective padding, no nonlinearity)
3. scaled updates ``alpha_k * dC`` / ``beta_k * dN`` and residual injections
   ``gamma_k * psi_c @ R`` / ``gamma_k * psi_n @ R``
4. provisional states ``C + update``, ``N + update``
5. memory update of each provisional state (1x1 gated recurrence, weights
   shared across steps, separate weights per branch)
6. the entropy gate of R scales the injection:
   ``C_next = memory_C + gate * injection_C`` (gate broadcast over channels)

Initial state: C = 0, N = D, memories = 0.  Step scalars are per step;
everything else is shared across steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .core import ConfigError, as_field, as_plane, frobenius_norm, sigmoid
from .objective import nuisance_mean, separation
from .sve import GateParams, gate_map, init_gate_params, patch_entropies

__all__ = [
    "MemoryCell",
    "SolverParams",
    "HeadParams",
    "SolverState",
    "SolverRun",
    "TraceRow",
    "init_memory_cell",
    "init_solver_params",
    "init_head_params",
    "conv3x3_reflect",
    "channel_map",
    "memory_update",
    "init_state",
    "step",
    "run",
    "predict",
    "trace_columns",
    "trace_csv",
]

_STREAM_PHI_C = 21
_STREAM_PHI_N = 22
_STREAM_HEAD = 23


@dataclass
class MemoryCell:
    """1x1 convolutional gated-recurrence weights for one branch.

    Gates see the channel stack [x, h]; the candidate sees [x, r*h]:

        z = sigmoid(w_z @ [x, h] + b_z)         update gate
        r = sigmoid(w_r @ [x, h] + b_r)         reset gate
        cand = tanh(w_c @ [x, r*h] + b_c)
        h_new = (1 - z) * h + z * cand
    """

    w_z: np.ndarray
    b_z: np.ndarray
    w_r: np.ndarray
    b_r: np.ndarray
    w_c: np.ndarray
    b_c: np.ndarray


@dataclass
class SolverParams:
    """All learnable and structural solver settings (see module docstring)."""

    steps: int
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    phi_c: np.ndarray
    phi_n: np.ndarray
    psi_c: np.ndarray
    psi_n: np.ndarray
    mem_c: MemoryCell
    mem_n: MemoryCell
    gate: GateParams
    memory_bypass: bool = False
    gate_bypass: bool = False

    @property
    def channels(self) -> int:
        return int(self.phi_c.shape[0])


@dataclass
class HeadParams:
    """Linear per-pixel read-out of the change estimate.

    logits = weights . C + bias; probabilities = sigmoid(logits);
    the predicted mask is probabilities > threshold (strict).
    """

    weights: np.ndarray
    bias: float
    threshold: float = 0.4


@dataclass(frozen=True)
class SolverState:
    c: np.ndarray
    n: np.ndarray
    mem_c: np.ndarray
    mem_n: np.ndarray


@dataclass(frozen=True)
class TraceRow:
    step: int
    res_norm: float
    mu_n: float
    separation: float
    sve_changed: float | None = None
    sve_unchanged: float | None = None
    gate_min: float | None = None
    gate_mean: float | None = None
    gate_max: float | None = None


@dataclass(frozen=True)
class SolverRun:
    """States and diagnostics of one unrolled run.

    ``states[k]`` is the (C, N) pair after k steps (index 0 = initial state);
    ``gates[k]`` is the gate plane used in step k; ``trace`` has one row per
    state.
    """

    states: tuple
    gates: tuple
    trace: tuple

    @property
    def final(self) -> SolverState:
        return self.states[-1]


def init_memory_cell(channels: int) -> MemoryCell:
    """Near-passthrough init: update gate ~0.982 open, candidate = tanh(x).

    Keeps the untrained solver close to the plain (memoryless) update so the
    default dynamics stay contractive; fitting moves the weights from there.
    """
    d = int(channels)
    w_c = np.concatenate([np.eye(d), np.zeros((d, d))], axis=1)
    return MemoryCell(
        w_z=np.zeros((d, 2 * d)),
        b_z=np.full(d, 4.0),
        w_r=np.zeros((d, 2 * d)),
        b_r=np.zeros(d),
        w_c=w_c,
        b_c=np.zeros(d),
    )


def init_solver_params(
    channels: int,
    steps: int = 3,
    reduced_channels: int = 4,
    patch_side: int = 8,
    epsilon: float = 1e-8,
    seed: int = 0,
    memory_bypass: bool = False,
) -> SolverParams:
    """Seeded defaults: scalars 0.5, psi identity, phi ~ U(-s, s), s=1/sqrt(27d)."""
    d = int(channels)
    steps = int(steps)
    if d < 1:
        raise ConfigError(f"channels must be positive, got {d}")
    if steps < 0:
        raise ConfigError(f"steps must be non-negative, got {steps}")
    bound = 1.0 / np.sqrt(27.0 * d)
    half = np.full(steps, 0.5)
    return SolverParams(
        steps=steps,
        alpha=half.copy(),
        beta=half.copy(),
        gamma=half.copy(),
        phi_c=rng.uniform_array(seed, _STREAM_PHI_C, (d, 3 * d, 3, 3), -bound, bound),
        phi_n=rng.uniform_array(seed, _STREAM_PHI_N, (d, 3 * d, 3, 3), -bound, bound),
        psi_c=np.eye(d),
        psi_n=np.eye(d),
        mem_c=init_memory_cell(d),
        mem_n=init_memory_cell(d),
        gate=init_gate_params(d, reduced_channels, patch_side, epsilon, seed),
        memory_bypass=bool(memory_bypass),
    )


def init_head_params(channels: int, threshold: float = 0.4, seed: int = 0) -> HeadParams:
    d = int(channels)
    bound = 1.0 / np.sqrt(d)
    return HeadParams(
        weights=rng.uniform_array(seed, _STREAM_HEAD, (d,), -bound, bound),
        bias=0.0,
        threshold=float(threshold),
    )


def conv3x3_reflect(x, weights) -> np.ndarray:
    """3x3 cross-correlation with mirror padding (edge pixel not repeated).

    ``out[o, i, j] = sum_{c,a,b} weights[o, c, a, b] * xpad[c, i+a, j+b]``
    where xpad mirrors about the border pixel (numpy pad mode "reflect").
    """
    x = as_field(x, "conv3x3_reflect")
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 4 or w.shape[2:] != (3, 3):
        raise ConfigError(f"conv weights must be (out, in, 3, 3), got {w.shape}")
    if w.shape[1] != x.shape[0]:
        raise ConfigError(f"conv expects {w.shape[1]} input channels, field has {x.shape[0]}")
    if x.shape[1] < 2 or x.shape[2] < 2:
        raise ConfigError("conv3x3_reflect needs height and width >= 2")
    d_out = w.shape[0]
    h, width = x.shape[1], x.shape[2]
    pad = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    win = np.lib.stride_tricks.sliding_window_view(pad, (3, 3), axis=(1, 2))
    col = win.transpose(1, 2, 0, 3, 4).reshape(h * width, x.shape[0] * 9)
    out = col @ w.reshape(d_out, x.shape[0] * 9).T
    return np.ascontiguousarray(out.T.reshape(d_out, h, width))


def channel_map(w, x) -> np.ndarray:
    """Per-pixel channel mixing: out[o] = sum_c w[o, c] * x[c]."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != x.shape[0]:
        raise ConfigError(f"channel map {w.shape} does not match {x.shape[0]} channels")
    return np.tensordot(w, x, axes=([1], [0]))


def memory_update(x, h, cell: MemoryCell) -> np.ndarray:
    """One gated-recurrence update (see :class:`MemoryCell`)."""
    xh = np.concatenate([x, h], axis=0)
    z = sigmoid(channel_map(cell.w_z, xh) + cell.b_z[:, None, None])
    r = sigmoid(channel_map(cell.w_r, xh) + cell.b_r[:, None, None])
    xrh = np.concatenate([x, r * h], axis=0)
    cand = np.tanh(channel_map(cell.w_c, xrh) + cell.b_c[:, None, None])
    return (1.0 - z) * h + z * cand


def init_state(dfield) -> SolverState:
    """C = 0, N = D, memories = 0."""
    d = as_field(dfield, "init_state")
    zero = np.zeros_like(d)
    return SolverState(c=zero.copy(), n=d.copy(), mem_c=zero.copy(), mem_n=zero.copy())


def step(dfield, state: SolverState, params: SolverParams, k: int):
    """One unrolled step; returns (next state, gate plane used)."""
    dfield = as_field(dfield, "step")
    if not 0 <= int(k) < params.steps:
        raise ConfigError(f"step index {k} out of range [0, {params.steps})")
    k = int(k)
    residual = dfield - (state.c + state.n)
    stacked = np.concatenate([state.c, state.n, residual], axis=0)
    draft_c = conv3x3_reflect(stacked, params.phi_c)
    draft_n = conv3x3_reflect(stacked, params.phi_n)
    update_c = params.alpha[k] * draft_c
    update_n = params.beta[k] * draft_n
    inject_c = params.gamma[k] * channel_map(params.psi_c, residual)
    inject_n = params.gamma[k] * channel_map(params.psi_n, residual)
    prov_c = state.c + update_c
    prov_n = state.n + update_n
    if params.memory_bypass:
        mem_c, mem_n = prov_c, prov_n
    else:
        mem_c = memory_update(prov_c, state.mem_c, params.mem_c)
        mem_n = memory_update(prov_n, state.mem_n, params.mem_n)
    if params.gate_bypass:
        gate = np.ones(dfield.shape[1:], dtype=np.float64)
    else:
        gate = gate_map(residual, params.gate)
    new_c = mem_c + gate[None, :, :] * inject_c
    new_n = mem_n + gate[None, :, :] * inject_n
    return SolverState(c=new_c, n=new_n, mem_c=mem_c, mem_n=mem_n), gate


def _group_mean(values: np.ndarray, indices) -> float | None:
    if indices is None or len(indices) == 0:
        return None
    return float(np.mean(values[np.asarray(indices, dtype=int)]))


def _trace_row(dfield, state, k, params, patch_groups, gate) -> TraceRow:
    res = frobenius_norm(dfield - (state.c + state.n))
    sve_ch = sve_un = None
    if patch_groups is not None:
        ent = patch_entropies(state.c, params.gate.patch_side, params.gate.epsilon)
        sve_ch = _group_mean(ent, patch_groups[0])
        sve_un = _group_mean(ent, patch_groups[1])
    gmin = gmean = gmax = None
    if gate is not None:
        gmin, gmean, gmax = float(gate.min()), float(gate.mean()), float(gate.max())
    return TraceRow(
        step=k,
        res_norm=res,
        mu_n=nuisance_mean(state.n),
        separation=separation(state.c, state.n),
        sve_changed=sve_ch,
        sve_unchanged=sve_un,
        gate_min=gmin,
        gate_mean=gmean,
        gate_max=gmax,
    )


def run(dfield, params: SolverParams, patch_groups=None) -> SolverRun:
    """Unroll all steps from the canonical initial state.

    ``patch_groups``, when given as (changed, unchanged) patch index sets,
    enables the per-group SVE columns of the trace.
    """
    dfield = as_field(dfield, "run")
    if dfield.shape[0] != params.channels:
        raise ConfigError(
            f"params built for {params.channels} channels, field has {dfield.shape[0]}"
        )
    state = init_state(dfield)
    states = [state]
    gates = []
    trace = [_trace_row(dfield, state, 0, params, patch_groups, None)]
    for k in range(params.steps):
        state, gate = step(dfield, state, params, k)
        states.append(state)
        gates.append(gate)
        trace.append(_trace_row(dfield, state, k + 1, params, patch_groups, gate))
    return SolverRun(states=tuple(states), gates=tuple(gates), trace=tuple(trace))


def predict(c_field, head: HeadParams):
    """(logits, probabilities, predicted mask) from the change estimate."""
    c = as_field(c_field, "predict")
    w = np.asarray(head.weights, dtype=np.float64)
    if w.shape != (c.shape[0],):
        raise ConfigError(f"head weights {w.shape} do not match {c.shape[0]} channels")
    logits = np.tensordot(w, c, axes=([0], [0])) + float(head.bias)
    probs = sigmoid(logits)
    return logits, probs, (probs > head.threshold).astype(np.float64)


def trace_columns():
    return [
        "step",
        "res_norm",
        "mu_n",
        "separation",
        "sve_changed",
        "sve_unchanged",
        "gate_min",
        "gate_mean",
        "gate_max",
        "seg",
        "rec",
        "exp",
        "con",
        "ssec",
        "total",
    ]


def trace_csv(trace, seed, config_text: str = "", loss_report=None) -> str:
    """Render a trace (and optionally a final loss row) as a CSV string."""
    from .csvio import render_csv

    rows = []
    for row in trace:
        rows.append(
            {
                "step": row.step,
                "res_norm": row.res_norm,
                "mu_n": row.mu_n,
                "separation": row.separation,
                "sve_changed": row.sve_changed,
                "sve_unchanged": row.sve_unchanged,
                "gate_min": row.gate_min,
                "gate_mean": row.gate_mean,
                "gate_max": row.gate_max,
            }
        )
    if loss_report is not None:
        rows.append(
            {
                "step": "loss",
                "seg": loss_report.seg,
                "rec": loss_report.rec,
                "exp": loss_report.exp,
                "con": loss_report.con,
                "ssec": loss_report.ssec,
                "total": loss_report.total,
            }
        )
    return render_csv(trace_columns(), rows, seed, config_text)
