"""Insertion/deletion faithfulness scores for attribution rankings.

The model is collapsed to a binary indicator g over masks (prediction
agreement with the unmasked input).  The score of a feature set is half
its influence: the probability that re-randomizing those coordinates of
a uniform mask flips g.  Insertion scans the top-k sets of the ranking,
deletion their complements; the score is the mean over curve points.
Sampled estimates carry optional per-point Hoeffding confidence bounds
combined with a union correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adapters import ModelAdapter
from .core import Attribution, Mask, PredictionRelation, apply_mask, predicts_same
from .perturb import RankingPerturbation, perturb_ranking

__all__ = [
    "METHOD_NOTE",
    "IndicatorFunction",
    "InfluenceEstimate",
    "BiseBounds",
    "BiseScore",
    "CurveResult",
    "RankStabilityResult",
    "derive_indicator",
    "influence_estimate",
    "influence_exact",
    "insertion_bise",
    "deletion_bise",
    "bise_bounds",
    "insertion_test",
    "deletion_test",
    "morf",
    "lerf",
    "ranking_stability",
    "optimal_m_report",
]

METHOD_NOTE = (
    "indicator g flags prediction agreement with the unmasked input; "
    "interval uses per-point Hoeffding widths with a union correction"
)


class IndicatorFunction:
    """Binary function over masks, evaluated lazily against a model."""

    def __init__(self, n: int, fn, table: np.ndarray | None = None):
        self.n = n
        self._fn = fn
        self._table = table
        self._cache: dict[int, int] = {}

    @classmethod
    def from_table(cls, table: np.ndarray) -> "IndicatorFunction":
        table = np.asarray(table).astype(np.int8)
        n = table.size.bit_length() - 1
        if 1 << n != table.size:
            raise ValueError(f"table length {table.size} is not a power of two")
        return cls(n, None, table=table)

    def __call__(self, mask: Mask | int) -> int:
        bits = mask.bits if isinstance(mask, Mask) else int(mask)
        if self._table is not None:
            return int(self._table[bits])
        if bits not in self._cache:
            self._cache[bits] = int(self._fn(bits))
        return self._cache[bits]

    def batch(self, bits: np.ndarray) -> np.ndarray:
        if self._table is not None:
            return self._table[bits]
        return np.array([self(int(b)) for b in bits], dtype=np.int8)

    def table(self) -> np.ndarray:
        """Materialize the full truth table (exhaustive evaluation)."""
        if self._table is None:
            self._table = np.array([self(b) for b in range(1 << self.n)], dtype=np.int8)
        return self._table


def derive_indicator(model: ModelAdapter, x: np.ndarray,
                     rel: PredictionRelation) -> IndicatorFunction:
    """g(mask) = 1 iff the masked prediction matches the unmasked one."""
    x = np.asarray(x, dtype=float)
    baseline = model.evaluate(x)

    def fn(bits: int) -> int:
        out = model.evaluate(apply_mask(x, Mask(bits, model.n)))
        return int(predicts_same(out, baseline, rel))

    return IndicatorFunction(model.n, fn)


@dataclass(frozen=True)
class InfluenceEstimate:
    """Sampled influence of a coordinate set on an indicator."""

    subset_bits: int
    influence: float
    phi: float
    m: int


def _resample_pairs(n: int, subset_bits: int, m: int, rng: np.random.Generator):
    z = rng.integers(0, 1 << n, size=m, dtype=np.int64)
    u = rng.integers(0, 1 << n, size=m, dtype=np.int64)
    z_re = (z & ~subset_bits) | (u & subset_bits)
    return z, z_re


def influence_estimate(g: IndicatorFunction, subset: Mask | int, m: int,
                       rng: np.random.Generator) -> InfluenceEstimate:
    """Monte Carlo influence: 2 * P[g(z) != g(z with S re-randomized)]."""
    bits = subset.bits if isinstance(subset, Mask) else int(subset)
    if m < 1:
        raise ValueError(f"influence estimation needs m >= 1, got {m}")
    z, z_re = _resample_pairs(g.n, bits, m, rng)
    phi = float(np.mean(g.batch(z) != g.batch(z_re)))
    return InfluenceEstimate(subset_bits=bits, influence=2.0 * phi, phi=phi, m=m)


def influence_exact(g: IndicatorFunction, subset: Mask | int) -> float:
    """Exact influence by enumerating masks and re-randomized coordinates."""
    bits = subset.bits if isinstance(subset, Mask) else int(subset)
    table = g.table().astype(np.int16)
    idx = np.arange(1 << g.n, dtype=np.int64)
    stripped = idx & ~bits
    flips = 0.0
    w = bits
    count = 0
    while True:
        flips += float(np.mean(table[idx] != table[stripped | w]))
        count += 1
        if w == 0:
            break
        w = (w - 1) & bits
    return 2.0 * flips / count


@dataclass(frozen=True)
class BiseBounds:
    lower: float
    upper: float
    half_width: float
    epsilon: float
    delta: float
    m: int
    points: int


@dataclass(frozen=True)
class BiseScore:
    """One insertion or deletion curve with its aggregate score."""

    mode: str
    ks: tuple[int, ...]
    values: tuple[float, ...]
    auc: float
    step: int
    m: int
    exact: bool
    note: str = METHOD_NOTE
    bounds: BiseBounds | None = None

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode,
            "ks": list(self.ks),
            "values": list(self.values),
            "auc": self.auc,
            "step": self.step,
            "m": self.m,
            "exact": self.exact,
            "note": self.note,
        }
        if self.bounds is not None:
            d["bounds"] = {
                "lower": self.bounds.lower,
                "upper": self.bounds.upper,
                "half_width": self.bounds.half_width,
                "epsilon": self.bounds.epsilon,
                "delta": self.bounds.delta,
                "m": self.bounds.m,
                "points": self.bounds.points,
            }
        return d


def _curve_ks(n: int, step: int) -> list[int]:
    if step < 1:
        raise ValueError(f"step must be positive, got {step}")
    return list(range(step, n + 1, step))


def _topk_bits(attribution: Attribution, k: int) -> int:
    bits = 0
    for i in attribution.ranking[:k]:
        bits |= 1 << i
    return bits


def _curve_sets(attribution: Attribution, step: int, mode: str) -> tuple[list[int], list[int]]:
    n = attribution.n
    full = (1 << n) - 1
    ks = _curve_ks(n, step)
    if mode == "insertion":
        sets = [_topk_bits(attribution, k) for k in ks]
    else:
        sets = [full & ~_topk_bits(attribution, k) for k in ks]
    return ks, sets


def _bise(g: IndicatorFunction, attribution: Attribution, step: int, mode: str,
          m: int | None, rng: np.random.Generator | None,
          trapezoid: bool) -> BiseScore:
    ks, sets = _curve_sets(attribution, step, mode)
    if m is None or m == 0:
        phis = [influence_exact(g, bits) / 2.0 for bits in sets]
        m_used, exact = 0, True
    else:
        if rng is None:
            raise ValueError("sampled scoring needs an rng")
        phis = [influence_estimate(g, bits, m, rng).phi for bits in sets]
        m_used, exact = m, False
    auc = _curve_auc(ks, phis, trapezoid)
    return BiseScore(
        mode=mode,
        ks=tuple(ks),
        values=tuple(float(p) for p in phis),
        auc=auc,
        step=step,
        m=m_used,
        exact=exact,
    )


def _curve_auc(ks, values, trapezoid: bool) -> float:
    if trapezoid and len(ks) > 1:
        return float(np.trapezoid(values, ks) / (ks[-1] - ks[0]))
    return float(np.mean(values))


def insertion_bise(g: IndicatorFunction, attribution: Attribution, step: int = 4,
                   m: int | None = 100, rng: np.random.Generator | None = None,
                   trapezoid: bool = False) -> BiseScore:
    """Score the top-k sets of the ranking; ``m=None`` or 0 means exact."""
    return _bise(g, attribution, step, "insertion", m, rng, trapezoid)


def deletion_bise(g: IndicatorFunction, attribution: Attribution, step: int = 4,
                  m: int | None = 100, rng: np.random.Generator | None = None,
                  trapezoid: bool = False) -> BiseScore:
    """Score the complements of the top-k sets; ``m=None`` or 0 means exact."""
    return _bise(g, attribution, step, "deletion", m, rng, trapezoid)


def bise_bounds(score: BiseScore, epsilon: float, delta: float,
                m: int | None = None) -> BiseScore:
    """Attach a confidence interval for the true score to a sampled curve.

    Each curve point gets a Hoeffding half-width
    ``sqrt(ln(2K/delta) / (2m))``; a union bound over the K points makes
    the clipped interval of the mean hold with probability 1 - delta.
    ``epsilon`` is recorded as the target accuracy knob of the run.
    """
    if score.exact:
        raise ValueError("bounds apply to sampled scores; the exact score has no width")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    m = score.m if m is None else m
    if m < 1:
        raise ValueError(f"sample count must be positive, got {m}")
    k_points = len(score.ks)
    w = math.sqrt(math.log(2.0 * k_points / delta) / (2.0 * m))
    lows = [max(0.0, v - w) for v in score.values]
    highs = [min(1.0, v + w) for v in score.values]
    bounds = BiseBounds(
        lower=float(np.mean(lows)),
        upper=float(np.mean(highs)),
        half_width=w,
        epsilon=epsilon,
        delta=delta,
        m=m,
        points=k_points,
    )
    return BiseScore(
        mode=score.mode,
        ks=score.ks,
        values=score.values,
        auc=score.auc,
        step=score.step,
        m=score.m,
        exact=score.exact,
        note=score.note,
        bounds=bounds,
    )


@dataclass(frozen=True)
class CurveResult:
    mode: str
    ks: tuple[int, ...]
    values: tuple[float, ...]
    auc: float


def _class_prob_curve(model: ModelAdapter, x: np.ndarray, ranking, step: int,
                      mode: str) -> CurveResult:
    x = np.asarray(x, dtype=float)
    n = model.n
    baseline = model.evaluate(x)
    target = int(np.argmax(baseline))
    ks = _curve_ks(n, step)
    values = []
    for k in ks:
        kept = Mask.from_indices(ranking[:k], n)
        if mode == "deletion":
            kept = kept.complement()
        values.append(float(model.evaluate(apply_mask(x, kept))[target]))
    return CurveResult(mode=mode, ks=tuple(ks), values=tuple(values),
                       auc=float(np.mean(values)))


def insertion_test(model: ModelAdapter, x: np.ndarray, ranking,
                   step: int = 4) -> CurveResult:
    """Probability of the original class as top-k features are revealed."""
    return _class_prob_curve(model, x, ranking, step, "insertion")


def deletion_test(model: ModelAdapter, x: np.ndarray, ranking,
                  step: int = 4) -> CurveResult:
    """Probability of the original class as top-k features are removed."""
    return _class_prob_curve(model, x, ranking, step, "deletion")


def _retention_curve(model: ModelAdapter, x: np.ndarray, ranking, rel,
                     step: int, reverse: bool) -> CurveResult:
    x = np.asarray(x, dtype=float)
    n = model.n
    baseline = model.evaluate(x)
    order = list(ranking)[::-1] if reverse else list(ranking)
    ks = _curve_ks(n, step)
    values = []
    for k in ks:
        kept = Mask.from_indices(order[:k], n).complement()
        out = model.evaluate(apply_mask(x, kept))
        values.append(float(predicts_same(out, baseline, rel)))
    mode = "lerf" if reverse else "morf"
    return CurveResult(mode=mode, ks=tuple(ks), values=tuple(values),
                       auc=float(np.mean(values)))


def morf(model: ModelAdapter, x: np.ndarray, ranking, rel: PredictionRelation,
         step: int = 4) -> CurveResult:
    """Prediction retention while removing the most relevant features first."""
    return _retention_curve(model, x, ranking, rel, step, reverse=False)


def lerf(model: ModelAdapter, x: np.ndarray, ranking, rel: PredictionRelation,
         step: int = 4) -> CurveResult:
    """Prediction retention while removing the least relevant features first."""
    return _retention_curve(model, x, ranking, rel, step, reverse=True)


@dataclass(frozen=True)
class RankStabilityResult:
    mean_pct: float
    sd_pct: float
    trials: int
    pool_size: int
    per_trial_pct: tuple[float, ...]


def _order_positions(values: list[float]) -> np.ndarray:
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    pos = np.empty(len(values), dtype=int)
    for rank, idx in enumerate(order):
        pos[idx] = rank
    return pos


def ranking_stability(metric, model: ModelAdapter, x: np.ndarray,
                      pool: list[Attribution], perturbation: RankingPerturbation,
                      trials: int, seed: int,
                      bootstrap: int = 1000) -> RankStabilityResult:
    """How much ranking noise reorders a pool of candidate attributions.

    Per trial, every pool member's feature ranking is perturbed and
    rescored with ``metric(model, x, attribution)``; the displacement is
    the mean absolute change in the members' rank positions, reported as
    a percentage of the pool size.  The spread is one standard deviation
    of the trial mean under a 1000-resample bootstrap.
    """
    if len(pool) < 2:
        raise ValueError("ranking stability needs at least two candidate attributions")
    if trials < 1:
        raise ValueError(f"trials must be positive, got {trials}")
    base_positions = _order_positions([metric(model, x, a) for a in pool])
    pool_size = len(pool)
    per_trial = []
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        values = []
        for a in pool:
            shuffled = perturb_ranking(a.ranking, perturbation, rng)
            moved = Attribution(
                scores=a.scores,
                ranking=tuple(int(i) for i in shuffled),
                mask=Mask.from_indices(shuffled[: a.k], a.n),
                k=a.k,
            )
            values.append(metric(model, x, moved))
        positions = _order_positions(values)
        displacement = float(np.mean(np.abs(positions - base_positions)))
        per_trial.append(100.0 * displacement / pool_size)
    per_trial_arr = np.array(per_trial)
    boot_rng = np.random.default_rng([seed, trials, bootstrap])
    resampled = boot_rng.integers(0, trials, size=(bootstrap, trials))
    boot_means = per_trial_arr[resampled].mean(axis=1)
    return RankStabilityResult(
        mean_pct=float(per_trial_arr.mean()),
        sd_pct=float(boot_means.std()),
        trials=trials,
        pool_size=pool_size,
        per_trial_pct=tuple(float(v) for v in per_trial),
    )


def optimal_m_report(g: IndicatorFunction, attribution: Attribution,
                     m_grid=(1, 50, 100, 300, 500, 1000, 5000, 9000),
                     repeats: int = 5, seed: int = 0, step: int = 1,
                     mode: str = "insertion") -> list[dict]:
    """Variance of the score across repeats, per sample budget.

    ``m = 0`` rows use the exhaustive influence and should come out with
    zero variance; larger budgets should trend the variance down.
    """
    score_fn = insertion_bise if mode == "insertion" else deletion_bise
    rows = []
    for m in m_grid:
        aucs = []
        for j in range(repeats):
            if m == 0:
                score = score_fn(g, attribution, step=step, m=None)
            else:
                rng = np.random.default_rng([seed, m, j])
                score = score_fn(g, attribution, step=step, m=m, rng=rng)
            aucs.append(score.auc)
        rows.append(
            {
                "m": int(m),
                "mean_auc": float(np.mean(aucs)),
                "variance": float(np.var(aucs)),
                "repeats": repeats,
            }
        )
    return rows
