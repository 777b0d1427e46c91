"""Spectral analysis of functions on the Boolean cube.

Functions ``h: {0,1}^n -> R`` are stored as dense tables indexed by the
mask integer (bit ``i`` is feature ``i``).  Three coefficient systems are
supported:

* the standard Fourier basis ``chi_S(a) = prod_{i in S} (-1)^{a_i}``,
* the p-biased orthonormal basis ``chi^p_S(a) = prod (p - a_i)/sigma_p``
  with ``sigma_p = sqrt(p - p^2)``,
* the monotone basis of conjunction indicators ``1_T(a) = prod_{i in T} a_i``.

Random masking (each kept bit survives independently with probability
``lam``) acts on each basis in closed form: it shifts standard
coefficients downward onto subsets, scales monotone coefficients by
``lam**|T|``, and maps p-biased characters onto p/lam-biased ones.  The
random flipping operator scales standard coefficients by ``lam**|S|``
without moving them.  Those facts power the certified stability bounds
at the end of the module.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .core import Mask, apply_mask

__all__ = [
    "DenseBooleanFunction",
    "StdSpectrum",
    "PBiasedSpectrum",
    "MonotoneSpectrum",
    "StabilityBound",
    "SmoothedStabilityBound",
    "CheckReport",
    "SPECTRAL_CAP",
    "fourier_transform",
    "fourier_inverse",
    "monotone_transform",
    "monotone_inverse",
    "pbiased_transform",
    "pbiased_inverse",
    "smooth_std",
    "smooth_monotone",
    "smooth_exact",
    "smooth_value_table",
    "flip_operator",
    "flip_std",
    "tail_mass",
    "tail_bound",
    "change_of_basis_check",
    "variance_reduction_check",
    "stability_lower_bound",
    "smoothed_stability_bound",
    "hard_radius_monotone",
    "masking_vs_flipping_report",
    "degree_profile",
    "bernoulli_weights",
    "model_table",
    "model_output_table",
    "write_spectrum_csv",
]

SPECTRAL_CAP = 20


def _check_n(n: int) -> None:
    if not 0 <= n <= SPECTRAL_CAP:
        raise ValueError(f"dense spectral work is capped at n={SPECTRAL_CAP}, got n={n}")


def _degrees(n: int) -> np.ndarray:
    return np.bitwise_count(np.arange(1 << n, dtype=np.uint32)).astype(np.int64)


def _bit_halves(a: np.ndarray, bit: int):
    # Split the mask axis into (rows without bit, rows with bit) views.
    step = 1 << bit
    v = a.reshape(-1, 2, step, *a.shape[1:])
    return v[:, 0], v[:, 1]


@dataclass
class DenseBooleanFunction:
    """A function on the n-cube as a table of ``2**n`` values."""

    n: int
    table: np.ndarray

    def __post_init__(self) -> None:
        _check_n(self.n)
        self.table = np.asarray(self.table, dtype=float)
        if self.table.shape != (1 << self.n,):
            raise ValueError(f"table must have 2**{self.n} entries, got {self.table.shape}")

    @classmethod
    def from_callable(cls, n: int, fn) -> "DenseBooleanFunction":
        _check_n(n)
        return cls(n, np.array([float(fn(mask)) for mask in range(1 << n)]))

    def __call__(self, mask: Mask | int) -> float:
        idx = mask.bits if isinstance(mask, Mask) else int(mask)
        return float(self.table[idx])


@dataclass
class StdSpectrum:
    """Coefficients on the standard Fourier basis, indexed by subset bitmask."""

    n: int
    coeffs: np.ndarray


@dataclass
class PBiasedSpectrum:
    """Coefficients on the p-biased orthonormal basis."""

    n: int
    p: float
    coeffs: np.ndarray


@dataclass
class MonotoneSpectrum:
    """Coefficients on the monotone (conjunction-indicator) basis."""

    n: int
    coeffs: np.ndarray


def _wht_inplace(a: np.ndarray, n: int) -> np.ndarray:
    for bit in range(n):
        lo, hi = _bit_halves(a, bit)
        diff = lo - hi
        lo += hi
        hi[...] = diff
    return a


def fourier_transform(f: DenseBooleanFunction) -> StdSpectrum:
    """Standard Fourier coefficients ``2**-n * sum_a h(a) chi_S(a)``."""
    coeffs = _wht_inplace(f.table.copy(), f.n) / float(1 << f.n)
    return StdSpectrum(f.n, coeffs)


def fourier_inverse(spec: StdSpectrum) -> DenseBooleanFunction:
    return DenseBooleanFunction(spec.n, _wht_inplace(spec.coeffs.copy(), spec.n))


def monotone_transform(f: DenseBooleanFunction) -> MonotoneSpectrum:
    """Monotone coefficients by Moebius inversion over the subset lattice."""
    a = f.table.copy()
    for bit in range(f.n):
        lo, hi = _bit_halves(a, bit)
        hi -= lo
    return MonotoneSpectrum(f.n, a)


def monotone_inverse(mono: MonotoneSpectrum) -> DenseBooleanFunction:
    a = mono.coeffs.copy()
    for bit in range(mono.n):
        lo, hi = _bit_halves(a, bit)
        hi += lo
    return DenseBooleanFunction(mono.n, a)


def pbiased_transform(f: DenseBooleanFunction, p: float) -> PBiasedSpectrum:
    """Coefficients on the orthonormal basis for the Bernoulli(p) product measure."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"bias must lie strictly inside (0, 1), got {p}")
    sigma = math.sqrt(p - p * p)
    a = f.table.copy()
    for bit in range(f.n):
        lo, hi = _bit_halves(a, bit)
        old_lo = lo.copy()
        lo *= 1.0 - p
        lo += p * hi
        hi[...] = sigma * (old_lo - hi)
    return PBiasedSpectrum(f.n, p, a)


def pbiased_inverse(spec: PBiasedSpectrum) -> DenseBooleanFunction:
    p = spec.p
    sigma = math.sqrt(p - p * p)
    a = spec.coeffs.copy()
    for bit in range(spec.n):
        lo, hi = _bit_halves(a, bit)
        coeff_hi = hi.copy()
        hi[...] = lo + coeff_hi * (p - 1.0) / sigma
        lo += coeff_hi * p / sigma
    return DenseBooleanFunction(spec.n, a)


def _check_lambda(lam: float) -> None:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"masking rate must lie in [0, 1], got {lam}")


def smooth_std(spec: StdSpectrum, lam: float) -> StdSpectrum:
    """Random masking in the standard basis.

    Each character splits as ``M_lam chi_S = sum_{T subset S}
    lam^|T| (1-lam)^|S-T| chi_T``, so the smoothed coefficient of ``T``
    collects ``lam^|T| (1-lam)^|S-T| h_hat(S)`` over supersets ``S``.
    The factorized per-bit update keeps this at O(n 2^n).
    """
    _check_lambda(lam)
    a = spec.coeffs.copy()
    for bit in range(spec.n):
        lo, hi = _bit_halves(a, bit)
        lo += (1.0 - lam) * hi
        hi *= lam
    return StdSpectrum(spec.n, a)


def smooth_monotone(mono: MonotoneSpectrum, lam: float) -> MonotoneSpectrum:
    """Random masking in the monotone basis: scale degree k by ``lam**k``."""
    _check_lambda(lam)
    scale = np.power(lam, _degrees(mono.n)) if lam > 0 else (_degrees(mono.n) == 0).astype(float)
    return MonotoneSpectrum(mono.n, mono.coeffs * scale)


def smooth_value_table(values: np.ndarray, lam: float) -> np.ndarray:
    """Exact random-masking expectation for every mask row of a value table.

    ``values`` has shape ``(2**n,)`` or ``(2**n, m)``; the result holds
    ``E_z[h(a & z)]`` with kept bits surviving independently at rate
    ``lam``.
    """
    _check_lambda(lam)
    a = np.array(values, dtype=float)
    size = a.shape[0]
    n = size.bit_length() - 1
    if 1 << n != size:
        raise ValueError(f"table length {size} is not a power of two")
    for bit in range(n):
        lo, hi = _bit_halves(a, bit)
        hi *= lam
        hi += (1.0 - lam) * lo
    return a


def smooth_exact(f: DenseBooleanFunction, lam: float) -> DenseBooleanFunction:
    """Exact smoothed function, computed in the value domain."""
    return DenseBooleanFunction(f.n, smooth_value_table(f.table, lam))


def flip_std(spec: StdSpectrum, lam: float) -> StdSpectrum:
    """Random flipping in the standard basis: scale degree k by ``lam**k``."""
    _check_lambda(lam)
    scale = np.power(lam, _degrees(spec.n)) if lam > 0 else (_degrees(spec.n) == 0).astype(float)
    return StdSpectrum(spec.n, spec.coeffs * scale)


def flip_operator(f: DenseBooleanFunction, lam: float) -> DenseBooleanFunction:
    """Expectation under random bit flips with probability ``(1-lam)/2`` each.

    Computed exactly by contracting the standard spectrum pointwise, which
    is the closed form of this operator.
    """
    return fourier_inverse(flip_std(fourier_transform(f), lam))


def tail_mass(spec: StdSpectrum, k: int) -> float:
    """Total absolute coefficient mass at degree ``k`` and above."""
    if k < 0:
        raise ValueError(f"degree threshold must be nonnegative, got {k}")
    degs = _degrees(spec.n)
    return float(np.abs(spec.coeffs[degs >= k]).sum())


def tail_bound(n: int, k: int, lam: float) -> float:
    """Binomial tail ``P[Bin(n, lam) >= k]`` by exact pmf summation."""
    _check_lambda(lam)
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    return float(sum(math.comb(n, j) * lam**j * (1.0 - lam) ** (n - j) for j in range(k, n + 1)))


def bernoulli_weights(n: int, p: float) -> np.ndarray:
    """Probability of each mask under the Bernoulli(p) product measure."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"bias must lie in [0, 1], got {p}")
    degs = _degrees(n)
    with np.errstate(divide="ignore"):
        logw = degs * (np.log(p) if p > 0 else -np.inf) + (n - degs) * (
            np.log1p(-p) if p < 1 else 0.0
        )
    w = np.exp(logw)
    if p == 0.0:
        w = (degs == 0).astype(float)
    elif p == 1.0:
        w = (degs == n).astype(float)
    return w


@dataclass(frozen=True)
class CheckReport:
    """Outcome of an exact identity or inequality check."""

    name: str
    ok: bool
    lhs: float
    rhs: float
    max_abs_diff: float
    detail: str = ""


def change_of_basis_check(n: int, subset, p: float, lam: float,
                          tol: float = 1e-9) -> CheckReport:
    """Verify that masking maps a p-biased character onto a rescaled
    p/lam-biased one.

    Checks ``M_lam chi^p_S = ((lam-p)/(1-p))**(|S|/2) * chi^{p/lam}_S``
    pointwise over the whole cube.  Requires ``p < lam`` (at ``p == lam``
    the right-hand side degenerates).
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"bias must lie strictly inside (0, 1), got {p}")
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"masking rate must lie in (0, 1], got {lam}")
    if p > lam:
        raise ValueError(f"change of basis requires p <= lam, got p={p} > lam={lam}")
    if p == lam:
        raise ValueError("change of basis is degenerate at p == lam; use p < lam")
    subset = Mask.from_indices(subset, n) if not isinstance(subset, Mask) else subset
    lhs = smooth_value_table(_character_table(n, subset, p), lam)
    factor = ((lam - p) / (1.0 - p)) ** (subset.size / 2.0)
    rhs = factor * _character_table(n, subset, p / lam)
    diff = float(np.max(np.abs(lhs - rhs)))
    return CheckReport(
        name="change_of_basis",
        ok=diff <= tol,
        lhs=float(np.max(np.abs(lhs))),
        rhs=float(np.max(np.abs(rhs))),
        max_abs_diff=diff,
        detail=f"n={n} |S|={subset.size} p={p} lam={lam}",
    )


def _character_table(n: int, subset: Mask, p: float) -> np.ndarray:
    sigma = math.sqrt(p - p * p)
    table = np.ones(1 << n)
    for i in subset.indices:
        bit_on = (np.arange(1 << n) >> i & 1).astype(float)
        table *= (p - bit_on) / sigma
    return table


def variance_reduction_check(f: DenseBooleanFunction, p: float, lam: float,
                             tol: float = 1e-9) -> CheckReport:
    """Verify the masking variance contraction between biased measures.

    Checks ``Var_{p/lam}[M_lam h] <= (lam-p)/(1-p) * Var_p[h]``; when the
    function is centered under Bernoulli(p) the stronger second-moment
    form ``E_{p/lam}[(M_lam h)^2] <= E_p[h^2]`` is reported in the detail.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"bias must lie strictly inside (0, 1), got {p}")
    if not p <= lam <= 1.0:
        raise ValueError(f"variance reduction requires p <= lam <= 1, got lam={lam}")
    smoothed = smooth_value_table(f.table, lam)
    w_q = bernoulli_weights(f.n, p / lam)
    w_p = bernoulli_weights(f.n, p)
    mean_q = float(w_q @ smoothed)
    lhs = float(w_q @ smoothed**2) - mean_q**2
    mean_p = float(w_p @ f.table)
    var_p = float(w_p @ f.table**2) - mean_p**2
    rhs = (lam - p) / (1.0 - p) * var_p
    detail = f"p={p} lam={lam}"
    if abs(mean_p) <= 1e-12:
        m2_lhs = float(w_q @ smoothed**2)
        m2_rhs = float(w_p @ f.table**2)
        detail += f" centered_second_moment_ok={m2_lhs <= m2_rhs + tol}"
    return CheckReport(
        name="variance_reduction",
        ok=lhs <= rhs + tol,
        lhs=lhs,
        rhs=rhs,
        max_abs_diff=max(0.0, lhs - rhs),
        detail=detail,
    )


def _neighborhood_weights(d: int, r: int) -> np.ndarray:
    """P[added set covers a fixed k-subset] for k = 1..r, under a uniform
    draw from the radius-r neighborhood with d free slots."""
    total = sum(math.comb(d, i) for i in range(min(r, d) + 1))
    weights = np.zeros(r + 1)
    for k in range(1, min(r, d) + 1):
        covering = sum(math.comb(d - k, j - k) for j in range(k, min(r, d) + 1))
        weights[k] = covering / total
    return weights


def _interaction_mass_by_free_degree(coeffs: np.ndarray, n: int, alpha: Mask,
                                     r: int) -> np.ndarray:
    """Sum of |coefficient| grouped by the size of the subset's free part.

    Coefficients straddling the base mask count toward the free part they
    touch; grouping by ``|T - alpha|`` keeps the stability bound valid for
    such interactions (plain ``T subset free`` grouping would miss them).
    """
    idx = np.arange(1 << n, dtype=np.uint32)
    free_deg = np.bitwise_count(idx & np.uint32(~alpha.bits & ((1 << n) - 1)))
    mass = np.zeros(r + 1)
    sel = (free_deg >= 1) & (free_deg <= r)
    np.add.at(mass, free_deg[sel], np.abs(coeffs[sel]))
    return mass


@dataclass(frozen=True)
class StabilityBound:
    """Certified lower bound on the stability rate from monotone mass."""

    q: float
    bound: float
    raw_bound: float
    vacuous: bool
    radius: int
    gamma: float


def stability_lower_bound(mono: MonotoneSpectrum, alpha: Mask, r: int,
                          gamma: float) -> StabilityBound:
    """Lower-bound the stability rate via monotone interaction mass.

    ``Q`` adds, for each interaction subset with ``k >= 1`` free-slot
    members, its absolute coefficient times the probability that a
    uniform radius-``r`` perturbation covers those ``k`` slots; then
    ``tau_r >= 1 - Q/gamma``.  A negative raw bound is clamped to zero
    and flagged vacuous.
    """
    if mono.n != alpha.n:
        raise ValueError(f"spectrum width {mono.n} does not match mask width {alpha.n}")
    if r < 1:
        raise ValueError(f"radius must be at least 1, got {r}")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    d = alpha.n - alpha.size
    r_eff = min(r, d)
    weights = _neighborhood_weights(d, r_eff)
    mass = _interaction_mass_by_free_degree(mono.coeffs, mono.n, alpha, r_eff)
    q = float(weights @ mass)
    raw = 1.0 - q / gamma
    return StabilityBound(
        q=q,
        bound=max(0.0, raw),
        raw_bound=raw,
        vacuous=raw < 0.0,
        radius=r,
        gamma=gamma,
    )


@dataclass(frozen=True)
class SmoothedStabilityBound:
    """Stability bound for the smoothed model, next to the raw one."""

    q: float
    q_smoothed: float
    bound: float
    raw_bound: float
    vacuous: bool
    lam: float
    radius: int
    gamma: float


def smoothed_stability_bound(mono: MonotoneSpectrum, alpha: Mask, r: int,
                             gamma: float, lam: float) -> SmoothedStabilityBound:
    """Stability lower bound after random masking at rate ``lam``.

    Masking scales each monotone coefficient by ``lam**degree``, so the
    smoothed interaction mass satisfies ``Q_smoothed <= lam * Q``: every
    contributing subset has at least one free member, hence degree >= 1.
    """
    base = stability_lower_bound(mono, alpha, r, gamma)
    smoothed = stability_lower_bound(smooth_monotone(mono, lam), alpha, r, gamma)
    return SmoothedStabilityBound(
        q=base.q,
        q_smoothed=smoothed.q,
        bound=smoothed.bound,
        raw_bound=smoothed.raw_bound,
        vacuous=smoothed.vacuous,
        lam=lam,
        radius=r,
        gamma=gamma,
    )


def _conditioned_coeffs(mono: MonotoneSpectrum, alpha: Mask) -> np.ndarray:
    """Monotone coefficients of the restriction to masks above ``alpha``.

    Entry ``U`` (for ``U`` disjoint from alpha) absorbs every coefficient
    whose free part is exactly ``U``, making the expansion of
    ``h(alpha | S) - h(alpha)`` over free subsets exact.
    """
    a = mono.coeffs.copy()
    for bit in alpha.indices:
        lo, hi = _bit_halves(a, bit)
        lo += hi
    idx = np.arange(1 << mono.n, dtype=np.uint32)
    a[(idx & np.uint32(alpha.bits)) != 0] = 0.0
    return a


def hard_radius_monotone(mono: MonotoneSpectrum, alpha: Mask, gamma: float,
                         tol: float = 1e-12) -> int:
    """Largest radius at which every perturbation moves the value by at
    most ``gamma``.

    Uses the exact identity ``h(alpha | S) - h(alpha) = sum over nonempty
    T subset S`` of the alpha-conditioned monotone coefficients, scanning
    subset sizes upward until one violates the gap.
    """
    if mono.n != alpha.n:
        raise ValueError(f"spectrum width {mono.n} does not match mask width {alpha.n}")
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    cond = _conditioned_coeffs(mono, alpha)
    base = cond[0]
    cumulative = cond.copy()
    free_bits = alpha.complement().indices
    for bit in free_bits:
        lo, hi = _bit_halves(cumulative, bit)
        hi += lo
    idx = np.arange(1 << mono.n, dtype=np.uint32)
    free_sel = (idx & np.uint32(alpha.bits)) == 0
    sizes = np.bitwise_count(idx[free_sel]).astype(np.int64)
    moves = np.abs(cumulative[free_sel] - base)
    d = len(free_bits)
    worst = np.zeros(d + 1)
    np.maximum.at(worst, sizes, moves)
    for k in range(1, d + 1):
        if worst[k] > gamma + tol:
            return k - 1
    return d


def degree_profile(spec: StdSpectrum | MonotoneSpectrum) -> np.ndarray:
    """Mean absolute coefficient at each degree 0..n."""
    degs = _degrees(spec.n)
    out = np.zeros(spec.n + 1)
    counts = np.bincount(degs, minlength=spec.n + 1)
    np.add.at(out, degs, np.abs(spec.coeffs))
    return out / counts


def masking_vs_flipping_report(spec: StdSpectrum, lambdas) -> list[dict]:
    """Per-degree mean absolute coefficient under both smoothing operators.

    Flipping contracts every degree in place, so its profile only decays
    as ``lam`` drops; masking shifts mass down onto low degrees, which can
    grow.  Rows are dicts with operator, lam, degree, mean_abs_coeff.
    """
    rows = []
    for lam in lambdas:
        for op_name, smoothed in (
            ("masking", smooth_std(spec, lam)),
            ("flipping", flip_std(spec, lam)),
        ):
            profile = degree_profile(smoothed)
            for degree, value in enumerate(profile):
                rows.append(
                    {
                        "operator": op_name,
                        "lam": float(lam),
                        "degree": degree,
                        "mean_abs_coeff": float(value),
                    }
                )
    return rows


def model_table(model, x: np.ndarray, component: int = 0) -> DenseBooleanFunction:
    """Tabulate one output component of a model over all maskings of ``x``."""
    outputs = model_output_table(model, x)
    return DenseBooleanFunction(model.n, outputs[:, component])


def model_output_table(model, x: np.ndarray) -> np.ndarray:
    """Evaluate a model on every masking of ``x``; shape ``(2**n, m)``."""
    _check_n(model.n)
    x = np.asarray(x, dtype=float)
    rows = np.empty((1 << model.n, model.m))
    for bits in range(1 << model.n):
        rows[bits] = model.evaluate(apply_mask(x, Mask(bits, model.n)))
    return rows


def write_spectrum_csv(spec: StdSpectrum | PBiasedSpectrum | MonotoneSpectrum,
                       path) -> None:
    """Dump coefficients as (subset_bitmask, degree, coefficient) rows."""
    degs = _degrees(spec.n)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subset_bitmask", "degree", "coefficient"])
        for bits, coeff in enumerate(spec.coeffs):
            writer.writerow([bits, int(degs[bits]), repr(float(coeff))])
