"""Flat parameter vectors with a layer-shape manifest.

The whole pipeline (local training, masking, weighting, server updates)
operates on a single flat float64 vector per model. The manifest records
the layer decomposition so model code can reshape slices back into matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Manifest = tuple[tuple[str, tuple[int, ...]], ...]


def _read_only(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out is arr:
        out = out.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class ParameterVector:
    """Immutable flat view of all model parameters.

    Attributes:
        values: 1-D float64 array holding every parameter.
        manifest: ordered (layer name, shape) records; the sum of the shape
            products must equal ``len(values)``.
    """

    values: np.ndarray
    manifest: Manifest

    def __post_init__(self) -> None:
        values = _read_only(np.asarray(self.values, dtype=np.float64).ravel())
        object.__setattr__(self, "values", values)
        expected = sum(int(np.prod(shape)) for _, shape in self.manifest)
        if expected != values.size:
            raise ValueError(
                f"manifest describes {expected} parameters but vector has {values.size}"
            )

    @property
    def size(self) -> int:
        return int(self.values.size)

    def with_values(self, values: np.ndarray) -> "ParameterVector":
        """New vector with the same manifest and fresh values."""
        return ParameterVector(values, self.manifest)

    def zeros_like(self) -> "ParameterVector":
        return ParameterVector(np.zeros(self.size), self.manifest)


def unflatten(params: ParameterVector) -> dict[str, np.ndarray]:
    """Split the flat vector into per-layer arrays (copies, in manifest order)."""
    layers: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in params.manifest:
        count = int(np.prod(shape))
        layers[name] = params.values[offset : offset + count].reshape(shape).copy()
        offset += count
    return layers


def flatten(layers: dict[str, np.ndarray], manifest: Manifest) -> ParameterVector:
    """Concatenate per-layer arrays back into a flat vector.

    Round-trips exactly: ``flatten(unflatten(p), p.manifest) == p``.
    """
    parts = []
    for name, shape in manifest:
        arr = np.asarray(layers[name], dtype=np.float64)
        if arr.shape != shape:
            raise ValueError(f"layer {name!r} has shape {arr.shape}, manifest says {shape}")
        parts.append(arr.ravel())
    return ParameterVector(np.concatenate(parts) if parts else np.zeros(0), manifest)


def check_same_manifest(a: ParameterVector, b: ParameterVector) -> None:
    if a.manifest != b.manifest:
        raise ValueError("parameter vectors have different manifests")
