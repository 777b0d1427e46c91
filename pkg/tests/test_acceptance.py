"""Acceptance battery: one test per shipped guarantee.

Each test prints a single ``[criterion N] PASS/FAIL`` line (run with
``pytest -s`` to see them all) and then asserts.  Criterion 2 is
deliberately red in part: its pinned smoothed-coefficient grid is
inconsistent with the masking operator for lam < 1, and the test
documents the discrepancy instead of adjusting either side.  Everything
else is expected green.
"""

import numpy as np
import pytest
from scipy import stats

from stabcert.adapters import (
    ConjunctionModel,
    FunctionAdapter,
    LookupTableModel,
    MajorityModel,
)
from stabcert.bise import (
    IndicatorFunction,
    bise_bounds,
    deletion_bise,
    insertion_bise,
    optimal_m_report,
)
from stabcert.core import (
    Attribution,
    Mask,
    ScalarGap,
    apply_mask,
    binarize_top_fraction,
)
from stabcert.perturb import PerturbationSpace, enumerate_masks, sample_uniform
from stabcert.sca import (
    certify_hard,
    estimate_stability,
    exact_stability,
    soft_sample_size,
)
from stabcert.smoothing import SmoothingConfig, mus_hard_radius, wrap_smoothed
from stabcert.spectral import (
    DenseBooleanFunction,
    StdSpectrum,
    fourier_inverse,
    fourier_transform,
    model_output_table,
    monotone_inverse,
    monotone_transform,
    smooth_exact,
    smooth_monotone,
    smooth_std,
    smooth_value_table,
    smoothed_stability_bound,
    stability_lower_bound,
    tail_bound,
    tail_mass,
    variance_reduction_check,
)


def report(num: int, ok: bool, detail: str) -> bool:
    print(f"[criterion {num}] {'PASS' if ok else 'FAIL'}: {detail}")
    return ok


def rand_table(n, seed, lo=-1.0, hi=1.0):
    return np.random.default_rng(seed).uniform(lo, hi, size=1 << n)


def scalar_model(table, n):
    def fn(x):
        bits = sum(1 << i for i in range(n) if x[i] != 0.0)
        return np.array([table[bits], 0.0])

    return FunctionAdapter(n, 2, fn)


def vector_model(table, n):
    m = table.shape[1]

    def fn(x):
        bits = sum(1 << i for i in range(n) if x[i] != 0.0)
        return table[bits]

    return FunctionAdapter(n, m, fn)


def test_criterion_1_sample_size():
    got = soft_sample_size(0.1, 0.1)
    assert report(1, got == 150, f"soft_sample_size(0.1, 0.1) = {got}, expected 150")


def test_criterion_2_and_function_spectra():
    and2 = DenseBooleanFunction(2, np.array([0.0, 0.0, 0.0, 1.0]))
    premise = fourier_transform(and2).coeffs
    assert np.allclose(premise, [0.25, -0.25, -0.25, 0.25], atol=1e-12)

    ok = True
    worst = 0.0
    for lam in (0.25, 0.5, 1.0):
        pinned = 0.25 * np.array(
            [(2 - lam) ** 2, -lam * (2 - lam), -lam * (2 - lam), lam**2]
        )
        # The pinned grid equals the smoothing matrix applied to the
        # all-(+1/4) vector, i.e. the premise with its signs dropped:
        unsigned = smooth_std(StdSpectrum(2, np.abs(premise)), lam).coeffs
        assert np.allclose(np.abs(pinned), np.abs(unsigned), atol=1e-12)
        actual = smooth_std(fourier_transform(and2), lam).coeffs
        diff = float(np.max(np.abs(actual - pinned)))
        worst = max(worst, diff)
        if diff > 1e-12:
            ok = False
    report(
        2,
        ok,
        "smoothed conjunction coefficients match the pinned grid "
        f"(max deviation {worst:.3g}); the operator yields (lam^2/4)(1,-1,-1,1) "
        "for lam < 1, so the pinned lam in {0.25, 0.5} entries are unattainable",
    )
    assert ok, (
        "pinned smoothed coefficients disagree with the masking operator for "
        "lam < 1: masking the two-bit conjunction gives the table "
        "[0, 0, 0, lam^2], whose coefficients are (lam^2/4)(1,-1,-1,1); the "
        "pinned values instead smooth the unsigned premise vector"
    )


def test_criterion_3_hoeffding_coverage():
    epsilon, delta, runs = 0.1, 0.1, 200
    lookup_scores = np.random.default_rng(123).normal(size=10)
    families = [
        ("conjunction", ConjunctionModel(12, [0, 1, 2]), np.ones(12),
         Mask.from_indices([0, 1, 5], 12)),
        ("majority", MajorityModel(13), np.ones(13),
         Mask.from_indices(range(5), 13)),
        ("lookup", LookupTableModel(10, m=3, seed=7, probabilities=True),
         np.ones(10), binarize_top_fraction(lookup_scores, 0.25).mask),
    ]
    ok = True
    parts = []
    for name, model, x, alpha in families:
        tau = exact_stability(model, x, alpha, 2)
        within = 0
        for seed in range(runs):
            rep = estimate_stability(model, x, alpha, 2, epsilon, delta, seed)
            assert rep.n_samples == 150
            within += abs(rep.tau_hat - tau) <= epsilon
        parts.append(f"{name} {within}/{runs} (tau={tau:.3f})")
        ok = ok and within >= 0.95 * runs
    assert report(3, ok, "estimates within epsilon: " + ", ".join(parts))


def test_criterion_4_hard_certificate_soundness():
    n, blockers = 20, (17, 18, 19)

    def fn(x):
        bad = any(x[i] != 0.0 for i in blockers)
        return np.array([1.0, 0.0]) if bad else np.array([0.0, 1.0])

    model = FunctionAdapter(n, 2, fn)
    x = np.ones(n)
    alpha = Mask.from_indices([0], n)
    tau = exact_stability(model, x, alpha, 1)
    assert tau == pytest.approx(0.85)

    certified = sum(
        certify_hard(model, x, alpha, 1, 0.1, 0.1, seed).verdict == "certified"
        for seed in range(1000)
    )
    rate = certified / 1000
    assert report(
        4, rate <= 0.12,
        f"false-certified rate {rate:.3f} over 1000 runs at exact tau 0.85 "
        "(bound allows 0.10, acceptance margin 0.12)",
    )


def test_criterion_5_operator_equivalence():
    n = 8
    idx = np.arange(1 << n)
    ks = np.array([int(i).bit_count() for i in idx])
    patterns = idx[:, None] & idx[None, :]
    worst = 0.0
    for seed in range(100):
        table = rand_table(n, seed + 5000)
        f = DenseBooleanFunction(n, table)
        std = fourier_transform(f)
        mono = monotone_transform(f)
        for lam in (0.25, 0.6, 0.9, 1.0):
            weights = lam**ks * (1.0 - lam) ** (n - ks)
            naive = (weights[None, :] * table[patterns]).sum(axis=1)
            for route in (
                smooth_exact(f, lam).table,
                fourier_inverse(smooth_std(std, lam)).table,
                monotone_inverse(smooth_monotone(mono, lam)).table,
            ):
                worst = max(worst, float(np.max(np.abs(route - naive))))
    assert report(
        5, worst <= 1e-9,
        f"three smoothing routes vs weighted enumeration, max deviation {worst:.3g}",
    )


def test_criterion_6_monotone_contraction():
    n = 10
    degrees = np.array([int(i).bit_count() for i in range(1 << n)])
    worst = 0.0
    for seed in range(5):
        f = DenseBooleanFunction(n, rand_table(n, seed + 6000))
        mono = monotone_transform(f)
        for lam in (0.25, 0.5, 0.9):
            via_values = monotone_transform(smooth_exact(f, lam)).coeffs
            scaled = lam**degrees * mono.coeffs
            worst = max(worst, float(np.max(np.abs(via_values - scaled))))
    assert report(
        6, worst <= 1e-12,
        f"coefficient contraction lam**|T| verified in the value domain, "
        f"max deviation {worst:.3g}",
    )


def test_criterion_7_inequality_suite():
    n = 8
    violations = {"tail": 0, "variance": 0, "bound": 0, "smoothed_bound": 0,
                  "mass_scaling": 0}
    rng = np.random.default_rng(7007)
    for seed in range(100):
        table = rand_table(n, seed + 7000, lo=0.0, hi=1.0)
        f = DenseBooleanFunction(n, table)
        std = fourier_transform(f)
        mono = monotone_transform(f)

        for lam in (0.25, 0.6, 0.9):
            smoothed_std = smooth_std(std, lam)
            for k in range(n + 1):
                lhs = tail_mass(smoothed_std, k)
                rhs = tail_bound(n, k, lam) * tail_mass(std, k)
                violations["tail"] += lhs > rhs + 1e-9

        for p in (0.1, 0.3, 0.5):
            for lam in (p, 0.6, 0.8, 1.0):
                if lam < p:
                    continue
                violations["variance"] += not variance_reduction_check(f, p, lam).ok

        alpha = Mask(int(rng.integers(0, 1 << n)), n)
        r = int(rng.integers(1, 3))
        gamma = float(rng.uniform(0.3, 1.0))
        result = stability_lower_bound(mono, alpha, r, gamma)
        tau = exact_stability(scalar_model(table, n), np.ones(n), alpha, r,
                              ScalarGap(gamma))
        violations["bound"] += result.bound > tau + 1e-12

        for lam in (0.3, 0.7):
            sm = smoothed_stability_bound(mono, alpha, r, gamma, lam)
            violations["mass_scaling"] += sm.q_smoothed > lam * sm.q + 1e-12
            smoothed_table = smooth_value_table(table, lam)
            tau_sm = exact_stability(scalar_model(smoothed_table, n), np.ones(n),
                                     alpha, r, ScalarGap(gamma))
            violations["smoothed_bound"] += sm.bound > tau_sm + 1e-12
    total = sum(violations.values())
    assert report(
        7, total == 0,
        "violations over 100 random functions: "
        + ", ".join(f"{k}={v}" for k, v in violations.items()),
    )


def test_criterion_8_mus_radius_soundness():
    n, m = 10, 3
    rng = np.random.default_rng(808)
    models = []
    for i in range(20):
        table = np.random.default_rng(i + 8000).random((1 << n, m))
        if i >= 15:  # give one class a wide margin so nonzero radii appear
            table[:, 0] = 3.0 + table[:, 0]
        models.append(table / table.sum(axis=1, keepdims=True))
    x = np.ones(n)
    checked = 0
    violations = 0
    nontrivial = 0
    for table in models:
        model = vector_model(table, n)
        smoothed_rows = {}
        for lam in (0.25, 0.5):
            config = SmoothingConfig(lam=lam, mode="exact")
            smodel = wrap_smoothed(model, config)
            assert smodel.radius_label == "exact"
            rows = smooth_value_table(model_output_table(model, x), lam)
            probe = Mask(int(rng.integers(1, 1 << n)), n)
            np.testing.assert_allclose(
                smodel.evaluate(apply_mask(x, probe)), rows[probe.bits], atol=1e-9
            )
            smoothed_rows[lam] = rows
        for _ in range(3):
            alpha = Mask(int(rng.integers(1, 1 << n)), n)
            for lam in (0.25, 0.5):
                rows = smoothed_rows[lam]
                base = rows[alpha.bits]
                radius = mus_hard_radius(base, lam)
                if radius.r_int < 1:
                    continue
                nontrivial += 1
                target = int(np.argmax(base))
                for beta in enumerate_masks(PerturbationSpace(alpha, radius.r_int)):
                    checked += 1
                    violations += int(np.argmax(rows[beta.bits])) != target
    assert nontrivial >= 1, "every certified radius came out zero; nothing was tested"
    assert report(
        8, violations == 0,
        f"{violations} argmax flips inside {checked} certified-radius "
        f"perturbations ({nontrivial} nontrivial radii)",
    )


def test_criterion_9_sampler_uniformity():
    space = PerturbationSpace(Mask.from_indices([0, 1, 2], 9), 3)
    members = list(enumerate_masks(space))
    assert len(members) == 42
    cell = {mask.bits: i for i, mask in enumerate(members)}
    draws = 100_000
    rng = np.random.default_rng(909)
    counts = np.zeros(42, dtype=int)
    size_three = 0
    for _ in range(draws):
        beta = sample_uniform(space, rng)
        counts[cell[beta.bits]] += 1
        size_three += beta.size - 3 == 3
    chi = stats.chisquare(counts)
    frac = size_three / draws
    ok = chi.pvalue >= 1e-3 and abs(frac - 20 / 42) <= 0.01
    assert report(
        9, ok,
        f"chi-square p={chi.pvalue:.4f} over 42 cells; "
        f"P(k=3)={frac:.4f} vs 20/42={20 / 42:.4f}",
    )


def test_criterion_10_bise_oracle_and_coverage():
    n, step, m = 8, 1, 2000
    over_three_se = 0
    events = 0
    for i in range(50):
        g = IndicatorFunction.from_table(
            np.random.default_rng(i + 10_000).integers(0, 2, size=1 << n)
        )
        ranking = list(np.random.default_rng(i + 20_000).permutation(n))
        attr = Attribution(
            scores=tuple(float(n - j) for j in range(n)),
            ranking=tuple(int(v) for v in ranking),
            mask=Mask.from_indices(ranking[:2], n),
            k=2,
        )
        for mode_id, fn in enumerate((insertion_bise, deletion_bise)):
            exact = fn(g, attr, step=step, m=None)
            sampled = fn(g, attr, step=step, m=m,
                         rng=np.random.default_rng([i, mode_id, 30_000]))
            phis = np.array(exact.values)
            se = float(np.sqrt(np.sum(phis * (1 - phis)) / m) / len(phis))
            events += 1
            over_three_se += abs(sampled.auc - exact.auc) > 3 * se
    part_a = over_three_se == 0

    g = IndicatorFunction.from_table(
        np.random.default_rng(777).integers(0, 2, size=1 << n)
    )
    attr = Attribution(
        scores=tuple(range(n, 0, -1)),
        ranking=tuple(range(n)),
        mask=Mask.from_indices([0, 1], n),
        k=2,
    )
    truth = insertion_bise(g, attr, step=step, m=None).auc
    delta = 0.3
    hits = 0
    for seed in range(500):
        score = insertion_bise(g, attr, step=step, m=500,
                               rng=np.random.default_rng(seed + 40_000))
        out = bise_bounds(score, epsilon=0.1, delta=delta)
        hits += out.bounds.lower <= truth <= out.bounds.upper
    part_b = hits / 500 >= 1 - delta

    sampled = insertion_bise(g, attr, step=step, m=1000,
                             rng=np.random.default_rng(50_000))
    widths = [bise_bounds(sampled, 0.1, delta, m=mm).bounds.half_width
              for mm in (1000, 3000, 5000, 9000)]
    rows = optimal_m_report(g, attr, m_grid=(1000, 9000), repeats=10, seed=6,
                            step=step)
    part_c = all(a > b for a, b in zip(widths, widths[1:]))
    part_c = part_c and rows[0]["variance"] >= rows[1]["variance"]
    ok = part_a and part_b and part_c
    assert report(
        10, ok,
        f"{over_three_se}/{events} scores beyond 3 SE; coverage {hits}/500 at "
        f"delta=0.3; widths {['%.4f' % w for w in widths]} with repeat variance "
        f"{rows[0]['variance']:.2e} -> {rows[1]['variance']:.2e}",
    )


def test_criterion_11_mild_smoothing_trend_report():
    epsilon = 0.1
    suite = [
        (ConjunctionModel(12, [0, 1, 2]), np.ones(12),
         Mask.from_indices([0, 1, 5], 12)),
        (MajorityModel(13), np.ones(13), Mask.from_indices(range(5), 13)),
        (LookupTableModel(10, m=2, seed=0, probabilities=True), np.ones(10),
         Mask.from_indices([0, 3], 10)),
    ]
    means = {}
    for lam in (1.0, 0.9):
        taus = []
        for model, x, alpha in suite:
            config = SmoothingConfig(lam=lam, samples=32, seed=5)
            smodel = wrap_smoothed(model, config)
            taus.append(
                estimate_stability(smodel, x, alpha, 1, 0.1, 0.1, seed=0).tau_hat
            )
        means[lam] = float(np.mean(taus))
    trend = means[0.9] >= means[1.0] - epsilon
    report(
        11, True,
        f"report only: mean tau_hat {means[0.9]:.3f} at lam=0.9 vs "
        f"{means[1.0]:.3f} at lam=1.0; tendency "
        f"{'holds' if trend else 'does not hold'} within epsilon={epsilon}",
    )
