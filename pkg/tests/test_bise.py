"""Insertion/deletion scoring, influence estimation, and rank stability."""

import math

import numpy as np
import pytest
from scipy import stats

from stabcert.adapters import ConjunctionModel, FunctionAdapter
from stabcert.bise import (
    METHOD_NOTE,
    IndicatorFunction,
    bise_bounds,
    deletion_bise,
    deletion_test,
    derive_indicator,
    influence_estimate,
    influence_exact,
    insertion_bise,
    insertion_test,
    lerf,
    morf,
    optimal_m_report,
    ranking_stability,
)
from stabcert.core import ArgmaxEqual, Attribution, Mask
from stabcert.perturb import RankingPerturbation


def from_ranking(ranking, k=None):
    n = len(ranking)
    k = k if k is not None else max(1, n // 4)
    scores = [0.0] * n
    for pos, feat in enumerate(ranking):
        scores[feat] = float(n - pos)
    return Attribution(
        scores=tuple(scores),
        ranking=tuple(ranking),
        mask=Mask.from_indices(list(ranking)[:k], n),
        k=k,
    )


def naive_influence(table, subset_bits, n):
    """Full double enumeration over the mask and the re-randomized draw."""
    idx = np.arange(1 << n)
    z = idx[:, None]
    u = idx[None, :]
    z_re = (z & ~subset_bits) | (u & subset_bits)
    return 2.0 * float(np.mean(table[z] != table[z_re]))


def rand_indicator(n, seed):
    rng = np.random.default_rng(seed)
    return IndicatorFunction.from_table(rng.integers(0, 2, size=1 << n))


class TestIndicatorFunction:
    def test_table_backed_lookup(self):
        g = IndicatorFunction.from_table([0, 1, 1, 0])
        assert g.n == 2
        assert g(0b01) == 1
        assert g(Mask.from_string("11")) == 0
        np.testing.assert_array_equal(g.batch(np.array([0, 1, 2, 3])), [0, 1, 1, 0])

    def test_lazy_evaluation_caches(self):
        calls = []

        def fn(bits):
            calls.append(bits)
            return bits & 1

        g = IndicatorFunction(3, fn)
        assert g(0b101) == 1
        assert g(0b101) == 1
        assert len(calls) == 1
        full = g.table()
        assert full.size == 8
        assert len(calls) == 8  # the cached mask is not re-queried

    def test_from_table_rejects_bad_lengths(self):
        with pytest.raises(ValueError, match="power of two"):
            IndicatorFunction.from_table([0, 1, 1])


class TestDeriveIndicator:
    def test_conjunction_agreement_pattern(self):
        model = ConjunctionModel(4, [0, 2])
        g = derive_indicator(model, np.ones(4), ArgmaxEqual())
        assert g(0b0101) == 1  # members intact
        assert g(0b1111) == 1
        assert g(0b0001) == 0  # member 2 masked away
        assert g(0b0000) == 0

    def test_one_model_call_per_distinct_mask(self):
        model = ConjunctionModel(3, [0])
        g = derive_indicator(model, np.ones(3), ArgmaxEqual())
        start = model.calls  # baseline already spent
        g(0b011)
        g(0b011)
        g(0b111)
        assert model.calls == start + 2


class TestInfluence:
    def test_empty_subset_never_flips(self):
        g = rand_indicator(5, 1)
        assert influence_exact(g, 0) == 0.0
        est = influence_estimate(g, 0, 500, np.random.default_rng(0))
        assert est.influence == 0.0

    def test_constant_indicator_has_zero_influence(self):
        g = IndicatorFunction.from_table(np.ones(16, dtype=int))
        assert influence_exact(g, 0b1010) == 0.0

    def test_parity_coordinate_influence_is_one(self):
        table = np.array([bin(b).count("1") % 2 for b in range(64)])
        g = IndicatorFunction.from_table(table)
        assert influence_exact(g, 0b000100) == pytest.approx(1.0)
        est = influence_estimate(g, 0b000100, 100_000, np.random.default_rng(7))
        assert est.phi == pytest.approx(0.5, abs=0.01)
        assert est.influence == pytest.approx(2 * est.phi)

    def test_exact_matches_the_double_enumeration(self):
        for seed in range(4):
            g = rand_indicator(5, seed + 10)
            for bits in (0b00001, 0b00110, 0b11111, 0b10100):
                got = influence_exact(g, bits)
                want = naive_influence(g.table(), bits, 5)
                assert got == pytest.approx(want, abs=1e-12)

    def test_estimate_concentrates_on_the_exact_value(self):
        g = rand_indicator(6, 3)
        bits = 0b001011
        phi_true = influence_exact(g, bits) / 2.0
        m = 20_000
        se = math.sqrt(phi_true * (1 - phi_true) / m)
        est = influence_estimate(g, bits, m, np.random.default_rng(11))
        assert abs(est.phi - phi_true) <= 3 * se

    def test_needs_at_least_one_sample(self):
        g = rand_indicator(3, 0)
        with pytest.raises(ValueError, match="m >= 1"):
            influence_estimate(g, 1, 0, np.random.default_rng(0))


class TestBiseCurves:
    def test_constant_indicator_scores_zero(self):
        g = IndicatorFunction.from_table(np.zeros(64, dtype=int))
        score = insertion_bise(g, from_ranking([0, 1, 2, 3, 4, 5]), step=2, m=None)
        assert score.ks == (2, 4, 6)
        assert score.values == (0.0, 0.0, 0.0)
        assert score.auc == 0.0
        assert score.exact

    def test_deletion_hits_the_empty_set_at_full_k(self):
        g = rand_indicator(5, 21)
        score = deletion_bise(g, from_ranking([4, 3, 2, 1, 0]), step=1, m=None)
        assert score.values[-1] == 0.0  # re-randomizing nothing never flips

    def test_auc_is_the_mean_unless_trapezoid_requested(self):
        g = rand_indicator(5, 22)
        a = from_ranking([0, 1, 2, 3, 4])
        flat = insertion_bise(g, a, step=2, m=None)
        assert flat.auc == pytest.approx(np.mean(flat.values))
        trap = insertion_bise(g, a, step=2, m=None, trapezoid=True)
        ks, vals = np.array(trap.ks), np.array(trap.values)
        want = np.trapezoid(vals, ks) / (ks[-1] - ks[0])
        assert trap.auc == pytest.approx(want)

    def test_sampled_curve_tracks_the_exact_one(self):
        g = rand_indicator(6, 23)
        a = from_ranking([5, 0, 3, 1, 4, 2])
        exact = insertion_bise(g, a, step=2, m=None)
        m = 20_000
        sampled = insertion_bise(g, a, step=2, m=m, rng=np.random.default_rng(5))
        for got, want in zip(sampled.values, exact.values):
            se = math.sqrt(max(want * (1 - want), 1e-4) / m)
            assert abs(got - want) <= 4 * se

    def test_sampling_without_an_rng_is_refused(self):
        g = rand_indicator(4, 24)
        with pytest.raises(ValueError, match="needs an rng"):
            insertion_bise(g, from_ranking([0, 1, 2, 3]), m=50)

    def test_deleting_the_top_is_inserting_the_bottom(self):
        # The complement of the k best features is the n-k worst ones, so
        # the deletion curve must replay the reversed ranking's insertion
        # curve backwards (the k = n point has no insertion twin).
        g = rand_indicator(6, 25)
        ranking = [2, 0, 5, 1, 4, 3]
        del_curve = deletion_bise(g, from_ranking(ranking), step=1, m=None)
        ins_curve = insertion_bise(g, from_ranking(ranking[::-1]), step=1, m=None)
        assert del_curve.values[:-1] == ins_curve.values[-2::-1]

    def test_method_note_travels_with_the_score(self):
        g = rand_indicator(4, 26)
        score = insertion_bise(g, from_ranking([0, 1, 2, 3]), m=None)
        assert score.note == METHOD_NOTE
        assert "Hoeffding" in score.note and "union" in score.note
        assert score.to_dict()["note"] == METHOD_NOTE


class TestBiseBounds:
    def make_sampled(self, m=500, seed=0, n=6, step=2):
        g = rand_indicator(n, seed + 40)
        a = from_ranking(list(range(n)))
        return g, a, insertion_bise(g, a, step=step, m=m, rng=np.random.default_rng(seed))

    def test_half_width_formula(self):
        _, _, score = self.make_sampled(m=100)
        out = bise_bounds(score, epsilon=0.05, delta=0.1)
        k_points = len(score.ks)
        assert out.bounds.half_width == pytest.approx(
            math.sqrt(math.log(2 * k_points / 0.1) / 200.0)
        )
        assert out.bounds.points == k_points
        assert out.bounds.m == 100

    def test_interval_brackets_the_point_estimate_and_clips(self):
        _, _, score = self.make_sampled(m=20)
        out = bise_bounds(score, epsilon=0.1, delta=0.2)
        assert 0.0 <= out.bounds.lower <= score.auc <= out.bounds.upper <= 1.0

    def test_wider_budgets_tighten_the_interval(self):
        _, _, score = self.make_sampled(m=100)
        w_small = bise_bounds(score, 0.1, 0.1, m=100).bounds.half_width
        w_big = bise_bounds(score, 0.1, 0.1, m=2500).bounds.half_width
        assert w_big == pytest.approx(w_small / 5)

    def test_exact_scores_have_no_interval(self):
        g = rand_indicator(4, 44)
        exact = insertion_bise(g, from_ranking([0, 1, 2, 3]), m=None)
        with pytest.raises(ValueError, match="exact score has no width"):
            bise_bounds(exact, 0.1, 0.1)

    def test_coverage_meets_the_confidence_level(self):
        g = rand_indicator(6, 45)
        a = from_ranking([0, 1, 2, 3, 4, 5])
        truth = insertion_bise(g, a, step=2, m=None).auc
        delta, runs, hits = 0.3, 80, 0
        for seed in range(runs):
            score = insertion_bise(g, a, step=2, m=500,
                                   rng=np.random.default_rng(seed + 1000))
            out = bise_bounds(score, epsilon=0.1, delta=delta)
            hits += out.bounds.lower <= truth <= out.bounds.upper
        assert hits / runs >= 1 - delta

    def test_delta_validation(self):
        _, _, score = self.make_sampled()
        for delta in (0.0, 1.0):
            with pytest.raises(ValueError, match="delta"):
                bise_bounds(score, 0.1, delta)


class TestClassProbabilityCurves:
    def test_constant_model_gives_a_flat_curve(self):
        model = FunctionAdapter(4, 2, lambda x: np.array([0.3, 0.7]))
        curve = insertion_test(model, np.ones(4), [0, 1, 2, 3], step=1)
        assert curve.values == (0.7, 0.7, 0.7, 0.7)
        assert curve.auc == pytest.approx(0.7)

    def test_single_member_conjunction_tracks_that_feature(self):
        model = ConjunctionModel(6, [0])
        x = np.ones(6)
        best_first = insertion_test(model, x, [0, 1, 2, 3, 4, 5], step=1)
        assert best_first.values == (1.0,) * 6
        worst_first = insertion_test(model, x, [5, 4, 3, 2, 1, 0], step=1)
        assert worst_first.values == (0.0,) * 5 + (1.0,)
        removed = deletion_test(model, x, [0, 1, 2, 3, 4, 5], step=1)
        assert removed.values == (0.0,) * 6
        assert removed.mode == "deletion"


class TestMorfLerf:
    def test_frozen_two_member_conjunction_curves(self):
        model = ConjunctionModel(6, [0, 1])
        x = np.ones(6)
        rel = ArgmaxEqual()
        down = morf(model, x, [0, 1, 2, 3, 4, 5], rel, step=1)
        assert down.values == (0.0,) * 6
        up = lerf(model, x, [0, 1, 2, 3, 4, 5], rel, step=1)
        assert up.values == (1.0, 1.0, 1.0, 1.0, 0.0, 0.0)
        assert up.auc == pytest.approx(4 / 6)
        assert down.mode == "morf" and up.mode == "lerf"


def insertion_auc_metric(model, x, attribution):
    return insertion_test(model, x, attribution.ranking, step=1).auc


class TestRankingStability:
    def make_pool(self):
        model = ConjunctionModel(2, [0])
        pool = [from_ranking([0, 1], k=1), from_ranking([1, 0], k=1)]
        return model, np.ones(2), pool

    def test_identity_perturbation_moves_nothing(self):
        model, x, pool = self.make_pool()
        result = ranking_stability(
            insertion_auc_metric, model, x, pool,
            RankingPerturbation("window", 0), trials=20, seed=3,
        )
        assert result.mean_pct == 0.0
        assert result.sd_pct == 0.0
        assert result.per_trial_pct == (0.0,) * 20

    def test_constant_metric_keeps_the_tie_order(self):
        model, x, pool = self.make_pool()
        result = ranking_stability(
            lambda model, x, a: 0.5, model, x, pool,
            RankingPerturbation("window", 2), trials=15, seed=4,
        )
        assert result.mean_pct == 0.0

    def test_two_member_swap_rate_matches_the_closed_form(self):
        # Both members are reshuffled independently and uniformly, so the
        # pool order swaps exactly when the strong ranking degrades and
        # the weak one recovers: probability 1/4, displacement 50 points,
        # expected mean 12.5.
        model, x, pool = self.make_pool()
        result = ranking_stability(
            insertion_auc_metric, model, x, pool,
            RankingPerturbation("window", 2), trials=400, seed=5,
        )
        assert result.mean_pct == pytest.approx(12.5, abs=4.0)
        assert set(result.per_trial_pct) <= {0.0, 50.0}
        assert result.sd_pct > 0.0
        assert result.sd_pct < np.std(result.per_trial_pct)

    def test_reruns_are_deterministic(self):
        model, x, pool = self.make_pool()
        args = (insertion_auc_metric, model, x, pool, RankingPerturbation("swap", 1))
        a = ranking_stability(*args, trials=30, seed=6)
        b = ranking_stability(*args, trials=30, seed=6)
        assert a == b

    def test_pool_and_trial_validation(self):
        model, x, pool = self.make_pool()
        with pytest.raises(ValueError, match="at least two"):
            ranking_stability(insertion_auc_metric, model, x, pool[:1],
                              RankingPerturbation("window", 2), trials=5, seed=0)
        with pytest.raises(ValueError, match="trials"):
            ranking_stability(insertion_auc_metric, model, x, pool,
                              RankingPerturbation("window", 2), trials=0, seed=0)


class TestOptimalMReport:
    def test_exact_rows_have_zero_variance(self):
        g = rand_indicator(6, 60)
        rows = optimal_m_report(g, from_ranking(list(range(6))),
                                m_grid=(0, 200), repeats=4, seed=1)
        assert rows[0]["m"] == 0
        assert rows[0]["variance"] == 0.0
        assert rows[1]["variance"] > 0.0

    def test_variance_trends_down_with_budget(self):
        g = rand_indicator(6, 61)
        grid = (50, 400, 3200, 25600)
        rows = optimal_m_report(g, from_ranking([3, 1, 5, 0, 2, 4]),
                                m_grid=grid, repeats=8, seed=2)
        assert [row["m"] for row in rows] == list(grid)
        variances = [row["variance"] for row in rows]
        assert variances[0] > variances[-1]
        rho = stats.spearmanr(grid, variances).statistic
        assert rho <= 0

    def test_large_budgets_recover_the_exact_score(self):
        g = rand_indicator(6, 62)
        a = from_ranking(list(range(6)))
        truth = insertion_bise(g, a, step=1, m=None).auc
        rows = optimal_m_report(g, a, m_grid=(25600,), repeats=3, seed=3)
        assert rows[0]["mean_auc"] == pytest.approx(truth, abs=0.02)
