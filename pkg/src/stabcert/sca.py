"""Sampling-based stability certification.

The stability rate of an explanation mask is the probability that a
uniformly drawn additive perturbation of it leaves the model's prediction
unchanged.  A Hoeffding-sized sample certifies the rate to additive error
``epsilon`` (soft), a geometric-sized sample certifies exceedance of
``1 - epsilon`` when every draw preserves the prediction (hard), and a
per-size variant controls the worst size class up to the radius.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .adapters import ModelAdapter
from .core import ArgmaxEqual, Mask, PredictionRelation, apply_mask, predicts_same
from .perturb import PerturbationSpace, enumerate_masks, sample_uniform, sample_uniform_sized

__all__ = [
    "CertificateReport",
    "ModelEvaluationError",
    "soft_sample_size",
    "hard_sample_size",
    "per_size_sample_size",
    "estimate_stability",
    "certify_hard",
    "estimate_stability_per_k",
    "exact_stability",
    "stability_curve",
]


class ModelEvaluationError(RuntimeError):
    """A model evaluation failed; carries the offending sample index."""


def _check_rates(epsilon: float, delta: float) -> None:
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def soft_sample_size(epsilon: float, delta: float) -> int:
    """Samples for a two-sided additive-epsilon estimate at confidence 1-delta."""
    _check_rates(epsilon, delta)
    return math.ceil(math.log(2.0 / delta) / (2.0 * epsilon**2))


def hard_sample_size(epsilon: float, delta: float) -> int:
    """Samples so that an all-preserving run certifies rate > 1-epsilon."""
    _check_rates(epsilon, delta)
    return math.ceil(math.log(delta) / math.log(1.0 - epsilon))


def per_size_sample_size(r: int, epsilon: float, delta: float) -> int:
    """Per-size-class samples; the union over r classes keeps confidence 1-delta."""
    _check_rates(epsilon, delta)
    if r < 1:
        raise ValueError(f"per-size estimation needs radius >= 1, got {r}")
    return math.ceil(math.log(r / delta) / (2.0 * epsilon**2))


@dataclass(frozen=True)
class CertificateReport:
    """Outcome of one stability estimation or certification run."""

    kind: str
    radius: int
    effective_radius: int
    tau_hat: float
    epsilon: float
    delta: float
    n_samples: int
    seed: int
    verdict: str
    notes: tuple[str, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "radius": self.radius,
            "effective_radius": self.effective_radius,
            "tau_hat": self.tau_hat,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "verdict": self.verdict,
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _baseline(model: ModelAdapter, x: np.ndarray, alpha: Mask) -> np.ndarray:
    try:
        return model.evaluate(apply_mask(x, alpha))
    except Exception as e:
        raise ModelEvaluationError(f"baseline evaluation failed: {e}") from e


def _indicator_sum(model: ModelAdapter, x: np.ndarray, baseline: np.ndarray,
                   masks: list[Mask], rel: PredictionRelation, workers: int) -> int:
    def one(i: int) -> bool:
        try:
            out = model.evaluate(apply_mask(x, masks[i]))
        except Exception as e:
            raise ModelEvaluationError(f"model evaluation failed at sample {i}: {e}") from e
        return predicts_same(out, baseline, rel)

    indices = range(len(masks))
    if workers > 1 and model.concurrency_safe:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hits = list(pool.map(one, indices))
    else:
        hits = [one(i) for i in indices]
    return sum(hits)


def estimate_stability(model: ModelAdapter, x: np.ndarray, alpha: Mask, r: int,
                       epsilon: float, delta: float, seed: int,
                       rel: PredictionRelation = ArgmaxEqual(),
                       workers: int = 1) -> CertificateReport:
    """Estimate the stability rate at radius ``r`` to within ``epsilon``.

    Draws ``soft_sample_size(epsilon, delta)`` perturbations uniformly
    with replacement; each sample gets its own generator derived from
    ``(seed, r, index)`` so the result is independent of evaluation
    order and worker count.
    """
    n_samples = soft_sample_size(epsilon, delta)
    space = PerturbationSpace(alpha, r)
    baseline = _baseline(model, x, alpha)
    masks = [
        sample_uniform(space, np.random.default_rng([seed, r, i]))
        for i in range(n_samples)
    ]
    hits = _indicator_sum(model, x, baseline, masks, rel, workers)
    notes = _radius_notes(space)
    return CertificateReport(
        kind="soft",
        radius=r,
        effective_radius=space.effective_radius,
        tau_hat=hits / n_samples,
        epsilon=epsilon,
        delta=delta,
        n_samples=n_samples,
        seed=seed,
        verdict="estimate_only",
        notes=notes,
    )


def certify_hard(model: ModelAdapter, x: np.ndarray, alpha: Mask, r: int,
                 epsilon: float, delta: float, seed: int,
                 rel: PredictionRelation = ArgmaxEqual(),
                 workers: int = 1) -> CertificateReport:
    """Certify (at confidence 1-delta) that the violation rate is below
    ``epsilon``; the verdict is Certified only when every draw preserved
    the prediction."""
    n_samples = hard_sample_size(epsilon, delta)
    space = PerturbationSpace(alpha, r)
    baseline = _baseline(model, x, alpha)
    masks = [
        sample_uniform(space, np.random.default_rng([seed, r, i]))
        for i in range(n_samples)
    ]
    hits = _indicator_sum(model, x, baseline, masks, rel, workers)
    tau_hat = hits / n_samples
    return CertificateReport(
        kind="hard",
        radius=r,
        effective_radius=space.effective_radius,
        tau_hat=tau_hat,
        epsilon=epsilon,
        delta=delta,
        n_samples=n_samples,
        seed=seed,
        verdict="certified" if hits == n_samples else "not_certified",
        notes=_radius_notes(space),
    )


def estimate_stability_per_k(model: ModelAdapter, x: np.ndarray, alpha: Mask, r: int,
                             epsilon: float, delta: float, seed: int,
                             rel: PredictionRelation = ArgmaxEqual(),
                             workers: int = 1) -> CertificateReport:
    """Estimate the minimum preservation rate over perturbation sizes 1..r.

    Each size class gets ``per_size_sample_size(r, epsilon, delta)``
    exact-size draws; the union bound keeps the overall confidence at
    1-delta for the minimum of the per-size means.
    """
    space = PerturbationSpace(alpha, r)
    r_eff = space.effective_radius
    notes = list(_radius_notes(space))
    if r_eff == 0:
        return CertificateReport(
            kind="per_size_soft",
            radius=r,
            effective_radius=0,
            tau_hat=1.0,
            epsilon=epsilon,
            delta=delta,
            n_samples=0,
            seed=seed,
            verdict="estimate_only",
            notes=tuple(notes + ["no free slots to perturb; rate is trivially 1"]),
        )
    n_per_k = per_size_sample_size(max(r, 1), epsilon, delta)
    baseline = _baseline(model, x, alpha)
    worst = 1.0
    for k in range(1, r_eff + 1):
        masks = [
            sample_uniform_sized(space, k, np.random.default_rng([seed, r, k, i]))
            for i in range(n_per_k)
        ]
        hits = _indicator_sum(model, x, baseline, masks, rel, workers)
        worst = min(worst, hits / n_per_k)
    if r_eff < r:
        notes.append(f"size classes above {r_eff} are empty and were skipped")
    return CertificateReport(
        kind="per_size_soft",
        radius=r,
        effective_radius=r_eff,
        tau_hat=worst,
        epsilon=epsilon,
        delta=delta,
        n_samples=n_per_k,
        seed=seed,
        verdict="estimate_only",
        notes=tuple(notes),
    )


def exact_stability(model: ModelAdapter, x: np.ndarray, alpha: Mask, r: int,
                    rel: PredictionRelation = ArgmaxEqual(),
                    cap: int | None = None) -> float:
    """Exact stability rate by enumerating the whole perturbation set."""
    space = PerturbationSpace(alpha, r)
    baseline = _baseline(model, x, alpha)
    hits = 0
    total = 0
    for mask in enumerate_masks(space, cap=cap):
        out = model.evaluate(apply_mask(x, mask))
        hits += predicts_same(out, baseline, rel)
        total += 1
    return hits / total


def stability_curve(model: ModelAdapter, x: np.ndarray, alpha: Mask, radii,
                    epsilon: float, delta: float, seed: int,
                    rel: PredictionRelation = ArgmaxEqual(),
                    kind: str = "soft", workers: int = 1) -> list[CertificateReport]:
    """Stability estimates across radii; streams differ per radius because
    the radius enters every per-sample generator key."""
    estimators = {
        "soft": estimate_stability,
        "hard": certify_hard,
        "per_size": estimate_stability_per_k,
    }
    if kind not in estimators:
        raise ValueError(f"kind must be one of {sorted(estimators)}, got {kind!r}")
    fn = estimators[kind]
    return [fn(model, x, alpha, r, epsilon, delta, seed, rel, workers) for r in radii]


def _radius_notes(space: PerturbationSpace) -> tuple[str, ...]:
    if space.effective_radius < space.radius:
        return (
            f"radius {space.radius} exceeds the {space.effective_radius} free slots; clamped",
        )
    return ()
