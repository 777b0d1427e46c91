"""Random-masking smoothing of black-box models.

The smoothed model averages the base model over random submasks of its
input: every coordinate independently survives with probability ``lam``.
Averaging makes each output coordinate ``lam``-Lipschitz in the number of
mask bits toggled, which converts an output margin into a certified hard
stability radius.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .adapters import ModelAdapter
from .spectral import SPECTRAL_CAP

__all__ = [
    "SmoothingConfig",
    "SmoothedModel",
    "MusRadius",
    "smooth_eval",
    "wrap_smoothed",
    "mus_hard_radius",
    "stable_input_hash",
]


@dataclass(frozen=True)
class SmoothingConfig:
    """How to average a model over random masking noise.

    ``mode`` is ``"montecarlo"`` (draw ``samples`` submasks) or
    ``"exact"`` (enumerate all ``2**n`` submask patterns; capped at
    n = 20).  ``lam = 1`` short-circuits to the identity and ``lam = 0``
    to a single evaluation at the zero input, in either mode.
    """

    lam: float
    samples: int = 32
    seed: int = 0
    mode: str = "montecarlo"

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"masking rate must lie in [0, 1], got {self.lam}")
        if self.mode not in ("montecarlo", "exact"):
            raise ValueError(f"mode must be 'montecarlo' or 'exact', got {self.mode!r}")
        if self.mode == "montecarlo" and self.samples < 1:
            raise ValueError(f"montecarlo smoothing needs samples >= 1, got {self.samples}")


def stable_input_hash(x: np.ndarray) -> int:
    """Seed-stable 64-bit digest of an input vector's float64 bytes."""
    digest = hashlib.blake2b(np.asarray(x, dtype=float).tobytes(), digest_size=8)
    return int.from_bytes(digest.digest(), "little")


def smooth_eval(model: ModelAdapter, x: np.ndarray, config: SmoothingConfig,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Smoothed output of ``model`` at ``x`` (typically a masked input).

    Monte Carlo draws come from ``rng`` when given, otherwise from a
    generator derived from ``(config.seed, hash(x))`` so repeated calls
    on the same input agree.  The sample mean reduces in fixed sample
    order with pairwise summation, so results do not depend on how the
    evaluations were scheduled.
    """
    x = np.asarray(x, dtype=float)
    if config.lam == 1.0:
        return model.evaluate(x)
    if config.lam == 0.0:
        return model.evaluate(np.zeros_like(x))
    if config.mode == "exact":
        n = model.n
        if n > SPECTRAL_CAP:
            raise ValueError(f"exact smoothing is capped at n={SPECTRAL_CAP}, got n={n}")
        acc = np.zeros(model.m)
        for bits in range(1 << n):
            k = bits.bit_count()
            weight = config.lam**k * (1.0 - config.lam) ** (n - k)
            z = np.array([(bits >> i) & 1 for i in range(n)], dtype=float)
            acc += weight * model.evaluate(x * z)
        return acc
    if rng is None:
        rng = np.random.default_rng([config.seed, stable_input_hash(x)])
    z = (rng.random((config.samples, model.n)) < config.lam).astype(float)
    outputs = np.empty((config.samples, model.m))
    for i in range(config.samples):
        outputs[i] = model.evaluate(x * z[i])
    return outputs.mean(axis=0)


class SmoothedModel(ModelAdapter):
    """Adapter view of the smoothed model; drop-in for estimators."""

    def __init__(self, inner: ModelAdapter, config: SmoothingConfig):
        super().__init__()
        self.inner = inner
        self.config = config
        self.n = inner.n
        self.m = inner.m
        self.probabilities = inner.probabilities
        self.concurrency_safe = inner.concurrency_safe

    def _evaluate(self, x: np.ndarray) -> np.ndarray:
        return smooth_eval(self.inner, x, self.config)

    @property
    def radius_label(self) -> str:
        """Whether radii from this model are certified or only indicative."""
        if self.config.lam in (0.0, 1.0) or self.config.mode == "exact":
            return "exact"
        return "heuristic"


def wrap_smoothed(model: ModelAdapter, config: SmoothingConfig) -> SmoothedModel:
    return SmoothedModel(model, config)


@dataclass(frozen=True)
class MusRadius:
    """Certified hard-stability radius from a smoothed output margin."""

    r_real: float
    r_int: int
    gap: float
    lam: float


def mus_hard_radius(smoothed_out: np.ndarray, lam: float) -> MusRadius:
    """Hard radius ``(top1 - top2) / (2 * lam)`` from a smoothed output.

    Valid for outputs in [0, 1] per coordinate, where each coordinate of
    the smoothed model moves by at most ``lam`` per toggled mask bit.
    ``lam = 0`` admits no certificate (the smoothed model is constant but
    carries no margin information) and raises.
    """
    out = np.asarray(smoothed_out, dtype=float)
    if out.ndim != 1 or out.size < 2:
        raise ValueError("smoothed output must be a vector with at least two classes")
    if np.any(out < -1e-9) or np.any(out > 1.0 + 1e-9):
        raise ValueError("smoothed output coordinates must lie in [0, 1]")
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"certification requires masking rate in (0, 1], got {lam}")
    top2 = np.sort(out)[-2:]
    gap = float(top2[1] - top2[0])
    r_real = gap / (2.0 * lam)
    return MusRadius(r_real=r_real, r_int=math.floor(r_real), gap=gap, lam=lam)
