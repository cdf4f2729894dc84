"""Global-descriptor pooling over convolutional feature maps.

A feature map is a C x H x W array of non-negative activations.  Pooling
collapses the spatial grid into one value per channel:

  spoc  spatial mean
  mac   spatial max
  gem   generalized (power) mean with exponent p; p=1 is spoc and
        p -> infinity approaches mac

Several pooled descriptors can be combined into a single unit-norm
embedding by normalizing each independently, concatenating, and
normalizing the concatenation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

POOLING_KINDS = ("spoc", "mac", "gem")


@dataclass(frozen=True)
class PoolingSpec:
    """Pooling kind plus the GeM exponent (ignored unless kind == "gem")."""

    kind: str
    p: float = 3.0

    def __post_init__(self):
        object.__setattr__(self, "kind", str(self.kind).lower())
        if self.kind not in POOLING_KINDS:
            raise ConfigError(f"pooling kind {self.kind!r} not one of {POOLING_KINDS}")
        if not self.p > 0:
            raise ConfigError(f"GeM exponent p must be > 0, got {self.p!r}")


def _validated_map(feature_map) -> np.ndarray:
    arr = np.asarray(feature_map, dtype=np.float64)
    if arr.ndim != 3 or arr.size == 0:
        raise DataError(f"feature map must be a non-empty C x H x W array, got shape {arr.shape}")
    flat = arr.reshape(arr.shape[0], -1)
    bad = ~np.isfinite(flat)
    if bad.any():
        ch = int(np.nonzero(bad.any(axis=1))[0][0])
        raise DataError(f"non-finite activation in channel {ch}")
    neg = flat < 0
    if neg.any():
        ch = int(np.nonzero(neg.any(axis=1))[0][0])
        raise DataError(f"negative activation in channel {ch}")
    return arr


def pool(feature_map, spec: PoolingSpec) -> np.ndarray:
    """Pool a C x H x W map into a length-C vector according to spec."""
    arr = _validated_map(feature_map)
    flat = arr.reshape(arr.shape[0], -1)
    if spec.kind == "spoc":
        return flat.mean(axis=1)
    if spec.kind == "mac":
        return flat.max(axis=1)
    # GeM, computed as M * mean((x/M)^p)^(1/p) so large p cannot overflow;
    # an all-zero channel pools to 0
    peak = flat.max(axis=1)
    out = np.zeros(arr.shape[0])
    nz = peak > 0
    if nz.any():
        scaled = flat[nz] / peak[nz, None]
        out[nz] = peak[nz] * np.power(
            np.power(scaled, spec.p).mean(axis=1), 1.0 / spec.p
        )
    return out


def combine_descriptors(feature_map, specs: Sequence[PoolingSpec]) -> np.ndarray:
    """Pool the map once per spec and merge into one unit vector.

    Each pooled vector is L2-normalized independently (so every descriptor
    contributes equal energy), the results are concatenated in spec order,
    and the concatenation is normalized again.  Output length is
    C * len(specs).
    """
    if len(specs) < 1:
        raise ConfigError("combine_descriptors needs at least one pooling spec")
    parts = []
    for spec in specs:
        v = pool(feature_map, spec)
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            raise DataError(f"pooled descriptor for {spec.kind!r} has zero norm")
        parts.append(v / norm)
    combined = np.concatenate(parts)
    return combined / np.linalg.norm(combined)
