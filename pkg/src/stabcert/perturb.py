"""Additive perturbation neighborhoods of a mask, and ranking noise.

The neighborhood of radius ``r`` around mask ``alpha`` contains every
mask that keeps all of ``alpha``'s features and adds at most ``r`` of the
remaining free slots.  Exact counting, uniform sampling, and (capped)
enumeration over that set live here, together with the window/swap
perturbations applied to attribution rankings.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass

import numpy as np

from .core import Mask

__all__ = [
    "PerturbationSpace",
    "RankingPerturbation",
    "EnumerationTooLarge",
    "DEFAULT_ENUM_CAP",
    "ENUM_CAP_ENV",
    "delta_size",
    "sample_uniform",
    "sample_uniform_sized",
    "enumerate_masks",
    "perturb_ranking",
]

DEFAULT_ENUM_CAP = 1 << 22
ENUM_CAP_ENV = "STABCERT_ENUM_CAP"


class EnumerationTooLarge(RuntimeError):
    """Enumerating the perturbation set would exceed the configured cap."""


@dataclass(frozen=True)
class PerturbationSpace:
    """All masks ``beta >= alpha`` with at most ``radius`` extra features."""

    alpha: Mask
    radius: int

    def __post_init__(self) -> None:
        if self.radius < 0:
            raise ValueError(f"radius must be nonnegative, got {self.radius}")

    @property
    def n(self) -> int:
        return self.alpha.n

    @property
    def free_slots(self) -> tuple[int, ...]:
        """Indices the base mask leaves unset, in ascending order."""
        return self.alpha.complement().indices

    @property
    def effective_radius(self) -> int:
        """The radius after clamping to the number of free slots."""
        return min(self.radius, len(self.free_slots))

    def size(self) -> int:
        return delta_size(self.n, self.alpha.size, self.radius)


def delta_size(n: int, a: int, r: int) -> int:
    """Exact cardinality of a radius-``r`` additive neighborhood.

    With ``d = n - a`` free slots this is ``sum_{i=0}^{min(r, d)} C(d, i)``,
    computed in exact integer arithmetic.
    """
    if not 0 <= a <= n:
        raise ValueError(f"mask size {a} out of range for n={n}")
    if r < 0:
        raise ValueError(f"radius must be nonnegative, got {r}")
    d = n - a
    return sum(math.comb(d, i) for i in range(min(r, d) + 1))


def _size_log_weights(d: int, r: int) -> np.ndarray:
    # log C(d, k) for k = 0..r, exact enough for Gumbel-max selection.
    ks = np.arange(r + 1)
    return (
        math.lgamma(d + 1)
        - np.array([math.lgamma(k + 1) for k in ks])
        - np.array([math.lgamma(d - k + 1) for k in ks])
    )


def sample_uniform(space: PerturbationSpace, rng: np.random.Generator) -> Mask:
    """Draw one mask uniformly from the perturbation set.

    The subset size ``k`` is selected with probability proportional to
    ``C(d, k)`` by perturbing the log-weights with Gumbel noise and taking
    the argmax, then ``k`` free slots are drawn without replacement.
    """
    free = space.free_slots
    d = len(free)
    r = space.effective_radius
    if r == 0:
        return space.alpha
    logw = _size_log_weights(d, r)
    gumbel = -np.log(-np.log(rng.random(r + 1)))
    k = int(np.argmax(logw + gumbel))
    return _add_free_slots(space, k, rng)


def sample_uniform_sized(space: PerturbationSpace, k: int, rng: np.random.Generator) -> Mask:
    """Draw a mask that adds exactly ``k`` uniformly chosen free slots."""
    if not 0 <= k <= len(space.free_slots):
        raise ValueError(f"cannot add {k} of {len(space.free_slots)} free slots")
    return _add_free_slots(space, k, rng)


def _add_free_slots(space: PerturbationSpace, k: int, rng: np.random.Generator) -> Mask:
    # Partial Fisher-Yates over the free-slot list: after k swap steps the
    # prefix holds a uniform k-subset.
    free = list(space.free_slots)
    bits = space.alpha.bits
    for i in range(k):
        j = int(rng.integers(i, len(free)))
        free[i], free[j] = free[j], free[i]
        bits |= 1 << free[i]
    return Mask(bits, space.n)


def _resolve_cap(cap: int | None) -> int:
    if cap is not None:
        return cap
    env = os.environ.get(ENUM_CAP_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError as e:
            raise ValueError(f"{ENUM_CAP_ENV} must be an integer, got {env!r}") from e
    return DEFAULT_ENUM_CAP


def enumerate_masks(space: PerturbationSpace, cap: int | None = None):
    """Yield every mask in the set, sorted by (size, free-slot combination).

    Combinations of free-slot indices are produced in lexicographic order
    within each size.  Raises :class:`EnumerationTooLarge` naming the set
    size when it exceeds ``cap`` (default ``2**22``, overridable through
    the ``STABCERT_ENUM_CAP`` environment variable).
    """
    total = space.size()
    limit = _resolve_cap(cap)
    if total > limit:
        raise EnumerationTooLarge(
            f"perturbation set has {total} members, exceeding the cap of {limit}"
        )
    free = space.free_slots
    for k in range(space.effective_radius + 1):
        for combo in itertools.combinations(free, k):
            bits = space.alpha.bits
            for i in combo:
                bits |= 1 << i
            yield Mask(bits, space.n)


@dataclass(frozen=True)
class RankingPerturbation:
    """Noise applied to an attribution ranking.

    ``window`` shuffles a contiguous block of ``size`` ranks starting at a
    uniform offset; ``swap`` exchanges ``size`` disjoint position pairs.
    ``size=0`` is the identity for both kinds.
    """

    kind: str
    size: int
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("window", "swap"):
            raise ValueError(f"kind must be 'window' or 'swap', got {self.kind!r}")
        if self.size < 0:
            raise ValueError(f"size must be nonnegative, got {self.size}")


def perturb_ranking(ranking, p: RankingPerturbation, rng: np.random.Generator) -> np.ndarray:
    """Apply a ranking perturbation, returning a new permutation array."""
    out = np.asarray(ranking).copy()
    n = out.size
    if sorted(out.tolist()) != list(range(n)):
        raise ValueError("ranking must be a permutation of 0..n-1")
    if p.size == 0:
        return out
    if p.kind == "window":
        if p.size > n:
            raise ValueError(f"window size {p.size} exceeds ranking length {n}")
        start = int(rng.integers(0, n - p.size + 1))
        out[start:start + p.size] = rng.permutation(out[start:start + p.size])
        return out
    if 2 * p.size > n:
        raise ValueError(f"{p.size} disjoint swaps need {2 * p.size} slots, ranking has {n}")
    pos = rng.choice(n, size=2 * p.size, replace=False)
    for i in range(p.size):
        a, b = pos[2 * i], pos[2 * i + 1]
        out[a], out[b] = out[b], out[a]
    return out
