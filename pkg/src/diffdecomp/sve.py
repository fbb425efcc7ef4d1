"""Patch-wise singular-value entropy (SVE) and the entropy-driven gate.

The SVE of a patch is the Shannon entropy of its normalised singular-value
spectrum: textured, spectrally spread patches score high, smooth or low-rank
patches score low.  The gate turns the SVE of the (channel-reduced, absolute)
residual into a multiplicative weight in (0, 1) for residual reinjection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .core import (
    ConfigError,
    PatchLayout,
    as_field,
    patch_matrices,
    sigmoid,
    singular_values_batch,
)

__all__ = [
    "GateParams",
    "init_gate_params",
    "normalized_spectrum",
    "patch_entropy",
    "patch_entropies",
    "sve_map",
    "gate_map",
]

# rng stream used for the channel-reduction init
_STREAM_REDUCER = 11


@dataclass
class GateParams:
    """Entropy-gate parameters.

    ``reducer`` is a (reduced_channels, channels) map applied to the absolute
    residual before the patch SVD; ``scale``/``shift`` form the affine map from
    entropy to gate logit.  With the uniform degenerate-spectrum convention an
    all-zero residual gates to sigmoid(scale * ln(reduced_channels) + shift).
    """

    reducer: np.ndarray
    patch_side: int = 8
    epsilon: float = 1e-8
    scale: float = 1.0
    shift: float = 0.0

    @property
    def reduced_channels(self) -> int:
        return int(self.reducer.shape[0])


def init_gate_params(
    channels: int,
    reduced_channels: int = 4,
    patch_side: int = 8,
    epsilon: float = 1e-8,
    seed: int = 0,
) -> GateParams:
    """Seeded default gate: reducer ~ U(-1/sqrt(d), 1/sqrt(d)), logit map x -> x."""
    channels = int(channels)
    reduced_channels = int(reduced_channels)
    if channels < 1 or reduced_channels < 1:
        raise ConfigError("channel counts must be positive")
    if reduced_channels > channels:
        raise ConfigError(
            f"reduced_channels {reduced_channels} exceeds channels {channels}"
        )
    bound = 1.0 / np.sqrt(channels)
    reducer = rng.uniform_array(seed, _STREAM_REDUCER, (reduced_channels, channels), -bound, bound)
    return GateParams(
        reducer=reducer,
        patch_side=int(patch_side),
        epsilon=float(epsilon),
        scale=1.0,
        shift=0.0,
    )


def normalized_spectrum(sigmas, epsilon: float = 1e-8) -> np.ndarray:
    """Spectrum normalised to unit mass; (near-)zero mass becomes uniform.

    The uniform fallback is the degenerate-patch convention: an all-zero (or
    epsilon-small) patch is treated as maximally uncertain rather than
    undefined.
    """
    s = np.asarray(sigmas, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ConfigError(f"normalized_spectrum: expected a non-empty vector, got {s.shape}")
    if np.any(s < 0.0):
        raise ConfigError("normalized_spectrum: negative singular value")
    total = float(np.sum(s))
    if total <= epsilon:
        return np.full(s.shape, 1.0 / s.size)
    return s / total


def patch_entropy(spectrum, epsilon: float = 1e-8) -> float:
    """Shannon entropy -sum p * ln(p + epsilon) of a normalised spectrum."""
    p = np.asarray(spectrum, dtype=np.float64)
    return float(-np.sum(p * np.log(p + epsilon)))


def patch_entropies(x, patch_side: int, epsilon: float = 1e-8) -> np.ndarray:
    """Per-patch SVE of a field, in raster patch order (length n_patches)."""
    x = as_field(x, "patch_entropies")
    layout = PatchLayout.for_shape(x.shape[1], x.shape[2], patch_side)
    mats = patch_matrices(x, layout)
    svs = singular_values_batch(mats)
    totals = np.sum(svs, axis=1)
    degenerate = totals <= epsilon
    safe = np.where(degenerate, 1.0, totals)
    p = svs / safe[:, None]
    p[degenerate] = 1.0 / svs.shape[1]
    return -np.sum(p * np.log(p + epsilon), axis=1)


def sve_map(x, patch_side: int, epsilon: float = 1e-8) -> np.ndarray:
    """Dense SVE plane: piecewise constant, one value per patch.

    Invariant under multiplication of the whole field by any positive scalar
    (the spectrum normalisation cancels scale).
    """
    x = as_field(x, "sve_map")
    layout = PatchLayout.for_shape(x.shape[1], x.shape[2], patch_side)
    ent = patch_entropies(x, patch_side, epsilon).reshape(layout.rows, layout.cols)
    return np.kron(ent, np.ones((layout.patch_side, layout.patch_side)))


def gate_map(residual, params: GateParams) -> np.ndarray:
    """Gate plane sigmoid(scale * SVE + shift) of the reduced absolute residual."""
    r = as_field(residual, "gate_map")
    if params.reducer.shape[1] != r.shape[0]:
        raise ConfigError(
            f"gate reducer expects {params.reducer.shape[1]} channels, field has {r.shape[0]}"
        )
    reduced = np.tensordot(params.reducer, np.abs(r), axes=([1], [0]))
    s = sve_map(reduced, params.patch_side, params.epsilon)
    return sigmoid(params.scale * s + params.shift)
