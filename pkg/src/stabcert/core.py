"""Core types for mask-based explanation analysis.

A binary mask selects a feature subset of an input vector; an attribution
ranks features by importance and induces a top-k mask.  Prediction
equivalence between model outputs is expressed through a small relation
type so that estimators stay agnostic to how "same prediction" is judged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mask",
    "ArgmaxEqual",
    "ScalarGap",
    "PredictionRelation",
    "Attribution",
    "InvariantViolation",
    "apply_mask",
    "predicts_same",
    "binarize_top_fraction",
    "decision_gap",
]


class InvariantViolation(AssertionError):
    """Raised when a documented contract of this library is broken."""


@dataclass(frozen=True)
class Mask:
    """A subset of ``n`` feature slots, stored as a bit pattern.

    Bit ``i`` of ``bits`` is 1 when feature ``i`` is kept.  String forms
    read left to right, so ``"101"`` keeps features 0 and 2 of n=3.
    """

    bits: int
    n: int

    def __post_init__(self) -> None:
        if self.n < 0:
            raise ValueError(f"mask width must be nonnegative, got {self.n}")
        if self.bits < 0 or self.bits >> self.n:
            raise ValueError(f"bits 0x{self.bits:x} out of range for n={self.n}")

    @classmethod
    def from_indices(cls, indices, n: int) -> "Mask":
        bits = 0
        for i in indices:
            if not 0 <= i < n:
                raise ValueError(f"feature index {i} out of range for n={n}")
            bits |= 1 << i
        return cls(bits, n)

    @classmethod
    def from_string(cls, s: str) -> "Mask":
        """Parse ``"101"`` style masks (character k is feature k)."""
        if set(s) - {"0", "1"}:
            raise ValueError(f"mask string must be binary, got {s!r}")
        bits = 0
        for i, ch in enumerate(s):
            if ch == "1":
                bits |= 1 << i
        return cls(bits, len(s))

    @classmethod
    def zeros(cls, n: int) -> "Mask":
        return cls(0, n)

    @classmethod
    def ones(cls, n: int) -> "Mask":
        return cls((1 << n) - 1, n)

    @property
    def size(self) -> int:
        """Number of kept features."""
        return self.bits.bit_count()

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n) if self.bits >> i & 1)

    def contains(self, other: "Mask") -> bool:
        """True when this mask keeps every feature ``other`` keeps."""
        self._check_width(other)
        return self.bits | other.bits == self.bits

    def union(self, other: "Mask") -> "Mask":
        self._check_width(other)
        return Mask(self.bits | other.bits, self.n)

    def difference(self, other: "Mask") -> "Mask":
        self._check_width(other)
        return Mask(self.bits & ~other.bits, self.n)

    def complement(self) -> "Mask":
        return Mask(~self.bits & ((1 << self.n) - 1), self.n)

    def to_array(self) -> np.ndarray:
        """The mask as a float vector of 0.0/1.0 entries."""
        out = np.zeros(self.n)
        for i in range(self.n):
            if self.bits >> i & 1:
                out[i] = 1.0
        return out

    def to_string(self) -> str:
        return "".join("1" if self.bits >> i & 1 else "0" for i in range(self.n))

    def _check_width(self, other: "Mask") -> None:
        if self.n != other.n:
            raise ValueError(f"mask widths differ: {self.n} vs {other.n}")


def apply_mask(x: np.ndarray, mask: Mask) -> np.ndarray:
    """Zero out the features the mask drops: elementwise ``x * mask``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (mask.n,):
        raise ValueError(f"input shape {x.shape} does not match mask width {mask.n}")
    return x * mask.to_array()


@dataclass(frozen=True)
class ArgmaxEqual:
    """Outputs agree when their argmax class matches (ties go to the
    lowest index, matching ``np.argmax``)."""


@dataclass(frozen=True)
class ScalarGap:
    """First output coordinates agree when they differ by at most ``gap``.

    The default of 1/2 matches the convention for [0, 1]-valued scores
    where a gap above one half must flip a thresholded decision.
    """

    gap: float = 0.5

    def __post_init__(self) -> None:
        if self.gap < 0:
            raise ValueError(f"gap must be nonnegative, got {self.gap}")


PredictionRelation = ArgmaxEqual | ScalarGap


def predicts_same(a: np.ndarray, b: np.ndarray, rel: PredictionRelation) -> bool:
    """Judge whether two model outputs count as the same prediction."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise ValueError(f"outputs must be equal-length nonempty vectors, got {a.shape} vs {b.shape}")
    if isinstance(rel, ArgmaxEqual):
        return int(np.argmax(a)) == int(np.argmax(b))
    if isinstance(rel, ScalarGap):
        return bool(abs(a[0] - b[0]) <= rel.gap)
    raise TypeError(f"unknown prediction relation {rel!r}")


@dataclass(frozen=True)
class Attribution:
    """Feature scores together with their induced ranking and top-k mask.

    ``ranking`` lists feature indices by descending score, ties broken by
    ascending index; ``mask`` keeps the first ``k`` ranked features.
    """

    scores: tuple[float, ...]
    ranking: tuple[int, ...]
    mask: Mask
    k: int

    @property
    def n(self) -> int:
        return self.mask.n


def binarize_top_fraction(scores, fraction: float) -> Attribution:
    """Build the top-``fraction`` attribution for a score vector.

    Keeps ``k = max(1, floor(fraction * n))`` features, so a positive
    fraction never yields an empty mask.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 1 or scores.size == 0:
        raise ValueError("scores must be a nonempty vector")
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    n = scores.size
    k = max(1, math.floor(fraction * n))
    ranking = sorted(range(n), key=lambda i: (-scores[i], i))
    mask = Mask.from_indices(ranking[:k], n)
    return Attribution(
        scores=tuple(float(s) for s in scores),
        ranking=tuple(ranking),
        mask=mask,
        k=k,
    )


def decision_gap(output: np.ndarray) -> float:
    """Half the margin between the two largest output coordinates."""
    output = np.asarray(output, dtype=float)
    if output.ndim != 1 or output.size < 2:
        raise ValueError("decision gap needs at least two output coordinates")
    top2 = np.sort(output)[-2:]
    return float((top2[1] - top2[0]) / 2.0)
