"""Hypothesis test, no-signalling tests, LP feasibility, and angle sweeps."""

import math

import numpy as np
import pytest
from scipy import stats

from belllab.core import (
    CANONICAL_ANGLES,
    CONTEXTS,
    AngleAssignment,
    ContextTable,
    SettingPair,
    chsh,
    estimate,
)
from belllab.couplings import (
    QuantumSingletModel,
    pearle_model,
    sample_batch,
)
from belllab.analysis import (
    AnalysisError,
    chsh_combinations,
    coupling_feasibility,
    lhv_pvalue,
    nosignalling_test,
    pairwise_tables,
    theta_sweep,
)
from belllab.pipeline import PairedRawData, postselect
from belllab.rng import stream

from helpers import (
    random_deterministic_model,
    random_nosignalling_tables,
    random_stochastic_model,
    tables_from_expectations,
)

SQRT2 = math.sqrt(2)


def table_from_correlations(e_by_ctx, n_per_ctx=2500):
    """Counts with exact per-context correlations and unbiased marginals."""
    counts = np.zeros((2, 2, 3, 3), dtype=np.int64)
    for s in CONTEXTS:
        e = e_by_ctx[(s.x, s.y)]
        same = int(round(n_per_ctx * (1 + e) / 2))
        diff = n_per_ctx - same
        counts[s.x, s.y, 0, 0] = same // 2 + same % 2
        counts[s.x, s.y, 1, 1] = same // 2
        counts[s.x, s.y, 0, 1] = diff // 2 + diff % 2
        counts[s.x, s.y, 1, 0] = diff // 2
    return ContextTable(counts)


class TestLhvPvalue:
    def test_boundary_gives_one(self):
        # All four correlations +1: S_hat = 1 + 1 + 1 - 1 = 2 exactly.
        table = table_from_correlations({(0, 0): 1, (0, 1): 1, (1, 0): 1, (1, 1): 1})
        report = lhv_pvalue(estimate(table))
        assert report.s_hat == pytest.approx(2.0)
        assert report.p_value == 1.0

    def test_hoeffding_formula_at_two_and_a_half(self):
        # S_hat = 2.5 at N = 10^4: p = exp(-10^4 * 0.25 / 32) = exp(-78.125).
        table = table_from_correlations({(0, 0): 1, (0, 1): 1, (1, 0): 1, (1, 1): 0.5})
        report = lhv_pvalue(estimate(table))
        assert report.s_hat == pytest.approx(2.5)
        assert report.n == 10_000
        assert math.log(report.p_value) == pytest.approx(-78.125)

    def test_monotone_in_s_and_n(self):
        def p_of(e11, n):
            table = table_from_correlations(
                {(0, 0): 1, (0, 1): 1, (1, 0): 1, (1, 1): e11}, n_per_ctx=n
            )
            return lhv_pvalue(estimate(table)).p_value

        assert p_of(0.8, 2500) < p_of(0.9, 2500) < p_of(1.0, 2500) == 1.0
        assert p_of(0.8, 5000) < p_of(0.8, 2500)

    def test_zero_outcomes_score_zero(self):
        counts = np.zeros((2, 2, 3, 3), dtype=np.int64)
        for s in CONTEXTS:
            counts[s.x, s.y, 0, 0] = 500   # (+1, +1)
            counts[s.x, s.y, 2, 2] = 500   # undetected slots
        report = lhv_pvalue(estimate(ContextTable(counts)))
        # Per-context sum of a*b is 500, N = 4000.
        assert report.s_hat == pytest.approx(4 * (500 * 3 - 500) / 4000)

    def test_refuses_empty_context(self):
        counts = np.zeros((2, 2, 3, 3), dtype=np.int64)
        counts[0, 0, 0, 0] = 100
        with pytest.raises(AnalysisError, match="populated"):
            lhv_pvalue(estimate(ContextTable(counts)))

    def test_refuses_grossly_nonuniform_settings(self):
        counts = np.zeros((2, 2, 3, 3), dtype=np.int64)
        counts[0, 0, 0, 0] = 100_000
        for s in CONTEXTS[1:]:
            counts[s.x, s.y, 0, 0] = 100
        with pytest.raises(AnalysisError, match="uniform"):
            lhv_pvalue(estimate(ContextTable(counts)))

    def test_lhv_runs_rarely_fire(self):
        # Hoeffding validity: under LHV data the rejection rate at 0.05
        # stays at or below 0.05 (here: far below).
        rng = np.random.default_rng(77)
        fails = 0
        runs = 100
        for _ in range(runs):
            model = random_deterministic_model(rng)
            g = np.random.default_rng(rng.integers(2**63))
            x = g.integers(0, 2, 10_000)
            y = g.integers(0, 2, 10_000)
            a, b = sample_batch(model, x, y, g)
            report = lhv_pvalue(estimate(ContextTable.from_arrays(x, y, a, b)))
            fails += report.p_value < 0.05
        assert fails / runs <= 0.05


class TestNoSignalling:
    def test_identical_marginals_give_z_zero(self):
        counts = np.zeros((2, 2, 3, 3), dtype=np.int64)
        for s in CONTEXTS:
            counts[s.x, s.y, 0, 0] = 300
            counts[s.x, s.y, 1, 1] = 700
        table = ContextTable(counts)
        report = nosignalling_test(table, table)
        for cmp in report.raw + report.final:
            assert cmp.z == 0.0
            assert cmp.p_value == 1.0
        assert report.raw_block_p == 1.0

    def test_two_proportion_example(self):
        # Oracle: the pooled two-proportion formula evaluated directly for
        # 0.6 vs 0.5 at n = 10^4 each (z around 14, p far below 1e-6).
        counts = np.zeros((2, 2, 3, 3), dtype=np.int64)
        counts[0, 0, 0, 0] = 6000
        counts[0, 0, 1, 0] = 4000
        counts[0, 1, 0, 0] = 5000
        counts[0, 1, 1, 0] = 5000
        for s in (SettingPair(1, 0), SettingPair(1, 1)):
            counts[s.x, s.y, 0, 0] = 500
            counts[s.x, s.y, 1, 0] = 500
        table = ContextTable(counts)
        report = nosignalling_test(table, table)
        cmp = next(c for c in report.final if c.party == "alice" and c.setting == 0)
        pooled = (6000 + 5000) / 20_000
        se = math.sqrt(pooled * (1 - pooled) * (2 / 10_000))
        z_expected = 0.1 / se
        assert cmp.z == pytest.approx(z_expected)
        assert z_expected == pytest.approx(14.2, abs=0.2)
        assert cmp.p_value < 1e-6

    def test_starved_cell_marked_undefined(self):
        counts = np.zeros((2, 2, 3, 3), dtype=np.int64)
        counts[0, 0, 0, 0] = 10  # context (0,1) empty
        table = ContextTable(counts)
        report = nosignalling_test(table, table)
        cmp = next(c for c in report.raw if c.party == "alice" and c.setting == 0)
        assert cmp.p_value is None and cmp.z is None

    def test_raw_denominator_includes_zeros(self):
        counts = np.zeros((2, 2, 3, 3), dtype=np.int64)
        counts[0, 0, 0, 0] = 60
        counts[0, 0, 2, 0] = 40   # zero outcomes dilute the raw proportion
        counts[0, 1, 0, 0] = 60
        counts[0, 1, 1, 0] = 40
        for s in (SettingPair(1, 0), SettingPair(1, 1)):
            counts[s.x, s.y, 0, 0] = 50
            counts[s.x, s.y, 1, 0] = 50
        report = nosignalling_test(ContextTable(counts), ContextTable(counts))
        cmp = next(c for c in report.raw if c.party == "alice" and c.setting == 0)
        assert cmp.p_plus[0] == pytest.approx(0.6)
        assert cmp.p_plus[1] == pytest.approx(0.6)
        assert cmp.n == (100, 100)

    def test_calibration_under_lhv_data(self):
        # p-values approximately uniform over repeated LHV runs.
        rng = np.random.default_rng(99)
        pvals = []
        for seed in range(40):
            model = random_stochastic_model(np.random.default_rng(seed), n_hidden=4)
            g = np.random.default_rng(1000 + seed)
            x = g.integers(0, 2, 10_000)
            y = g.integers(0, 2, 10_000)
            a, b = sample_batch(model, x, y, g)
            table = ContextTable.from_arrays(x, y, a, b)
            report = nosignalling_test(table, table)
            pvals.extend(c.p_value for c in report.final)
        pvals = np.array(pvals)
        ks = stats.kstest(pvals, "uniform")
        assert ks.pvalue > 1e-3
        assert 0.02 < float((pvals < 0.1).mean()) < 0.25

    def test_pearle_raw_passes_final_fires_with_delays(self):
        # Light version of the anomaly property (3 seeds); the full 20-seed
        # run lives in the acceptance suite.
        from belllab.protocol import SourceProtocolConfig, run_source_experiment
        from belllab.pipeline import CoincidencePolicy, match_coincidences

        model = pearle_model(CANONICAL_ANGLES)
        cfg = SourceProtocolConfig(
            pair_rate=100_000.0, duration=1.0, jitter_sd=2.0,
            setting_delay_a=(0.0, 4.0), setting_delay_b=(0.0, 6.0),
            outcome_delay_a=(0.0, 8.0), outcome_delay_b=(0.0, 8.0),
        )
        for seed in range(3):
            out = run_source_experiment(cfg, model, seed=seed)
            pairs = match_coincidences(out.stream_a, out.stream_b, CoincidencePolicy(window_ns=15))
            final, _ = postselect(pairs)
            report = nosignalling_test(out.truth.to_context_table(), final.to_context_table())
            assert report.final_block_p < 0.01
            assert report.raw_block_p > 0.05


class TestFeasibility:
    def test_uniform_product_tables_feasible(self):
        tables = {s: np.full((2, 2), 0.25) for s in CONTEXTS}
        result = coupling_feasibility(tables)
        assert result.feasible
        assert result.margin_error < 1e-9
        assert result.joint.sum() == pytest.approx(1.0, abs=1e-9)
        assert (result.joint >= 0).all()

    def test_singlet_canonical_table_infeasible(self):
        tables = pairwise_tables(QuantumSingletModel(angles=CANONICAL_ANGLES))
        # Oracle: no deterministic strategy exceeds CHSH 2, while the table
        # reaches 2*sqrt(2); enumeration confirms the separation.
        assert max(abs(c) for c in chsh_combinations(tables)) == pytest.approx(2 * SQRT2)
        result = coupling_feasibility(tables)
        assert not result.feasible
        assert result.max_violation == pytest.approx(2 * SQRT2, abs=1e-9)
        assert result.certificate.kind == "chsh"
        assert result.certificate.slack >= 2 * SQRT2 - 2 - 1e-9

    def test_lhv_model_tables_feasible_with_witness(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            model = random_deterministic_model(rng)
            result = coupling_feasibility(pairwise_tables(model))
            assert result.feasible
            assert result.margin_error < 1e-9

    def test_verdict_matches_chsh_enumeration_on_nosignalling_tables(self):
        rng = np.random.default_rng(41)
        disagreements = 0
        seen_infeasible = seen_feasible = 0
        for _ in range(200):
            tables = random_nosignalling_tables(rng)
            by_lp = coupling_feasibility(tables).feasible
            by_enum = max(abs(c) for c in chsh_combinations(tables)) <= 2.0
            disagreements += by_lp != by_enum
            seen_infeasible += not by_enum
            seen_feasible += by_enum
        assert disagreements == 0
        assert seen_infeasible > 0 and seen_feasible > 0

    def test_signalling_tables_infeasible_with_dual_certificate(self):
        # Alice's marginal depends on the remote setting: no CHSH combination
        # sees it, but no joint distribution exists either.
        e_a = {s: (0.5 if s.y == 0 else -0.5) for s in CONTEXTS}
        e_b = {s: 0.0 for s in CONTEXTS}
        e_ab = {s: 0.0 for s in CONTEXTS}
        tables = tables_from_expectations(e_a, e_b, e_ab)
        result = coupling_feasibility(tables)
        assert not result.feasible
        assert result.max_violation <= 2.0
        assert result.certificate.kind == "dual"
        assert result.certificate.slack > 1e-9

    def test_witness_margins_reproduce_inputs(self):
        rng = np.random.default_rng(52)
        tables = random_nosignalling_tables(rng)
        while max(abs(c) for c in chsh_combinations(tables)) > 2.0:
            tables = random_nosignalling_tables(rng)
        result = coupling_feasibility(tables)
        assert result.feasible
        # Recompute margins directly from the witness.
        from belllab.analysis import STRATEGY_ORDER

        for s in CONTEXTS:
            got = np.zeros((2, 2))
            for (a0, a1, b0, b1), w in zip(STRATEGY_ORDER, result.joint):
                a = (a0, a1)[s.x]
                b = (b0, b1)[s.y]
                got[0 if a == 1 else 1, 0 if b == 1 else 1] += w
            np.testing.assert_allclose(got, tables[s], atol=1e-9)

    def test_exact_boundary_tables_are_feasible(self):
        # A CHSH combination equal to 2 exactly sits on the local polytope
        # boundary and must not be misclassified by the tolerance.
        perfect = {s: np.array([[0.5, 0.0], [0.0, 0.5]]) for s in CONTEXTS}
        assert max(chsh_combinations(perfect)) == 2.0
        result = coupling_feasibility(perfect)
        assert result.feasible and result.margin_error < 1e-12
        anti = {s: np.array([[0.0, 0.5], [0.5, 0.0]]) for s in CONTEXTS}
        assert coupling_feasibility(anti).feasible

    def test_algebraic_extreme_has_maximal_slack(self):
        # E = (1, 1, 1, -1) reaches the algebraic bound 4; the certificate
        # separates with slack 4 - 2 = 2.
        e_ab = {s: (1.0 if (s.x, s.y) != (1, 1) else -1.0) for s in CONTEXTS}
        zero = {s: 0.0 for s in CONTEXTS}
        tables = tables_from_expectations(zero, zero, e_ab)
        result = coupling_feasibility(tables)
        assert not result.feasible
        assert result.max_violation == pytest.approx(4.0)
        assert result.certificate.slack == pytest.approx(2.0)

    def test_malformed_tables_rejected(self):
        tables = {s: np.full((2, 2), 0.25) for s in CONTEXTS}
        tables[SettingPair(0, 0)] = np.array([[0.5, 0.5], [0.5, 0.5]])
        with pytest.raises(AnalysisError, match="sum to 1"):
            coupling_feasibility(tables)
        tables[SettingPair(0, 0)] = np.array([[1.5, -0.5], [0.0, 0.0]])
        with pytest.raises(AnalysisError):
            coupling_feasibility(tables)


class TestThetaSweep:
    @staticmethod
    def singlet_factory(visibility=1.0):
        return lambda theta: QuantumSingletModel(
            angles=AngleAssignment(alice=(theta, 0.0), bob=(0.0, 0.0)),
            visibility=visibility,
        )

    def test_exact_cosine_values(self):
        points = theta_sweep(self.singlet_factory(), [0.0, math.pi / 2, math.pi])
        values = [p.e_ab for p in points]
        assert values[0] == pytest.approx(-1.0)
        assert values[1] == pytest.approx(0.0, abs=1e-15)
        assert values[2] == pytest.approx(1.0)

    def test_amplitude_fit_recovers_visibility(self):
        v = 0.7335
        thetas = np.linspace(0, 2 * math.pi, 24, endpoint=False)
        points = theta_sweep(self.singlet_factory(v), thetas, n_trials=50_000, seed=8)
        e = np.array([p.e_ab for p in points])
        # Least-squares amplitude against -cos(theta).
        basis = -np.cos(thetas)
        amplitude = float(basis @ e / (basis @ basis))
        assert amplitude == pytest.approx(v, abs=0.01)

    def test_postselection_sweep_matches_manual_pipeline(self):
        # Oracle: single-point runs of the sampling + estimation chain with
        # the same per-point streams.
        def factory(theta):
            return pearle_model(AngleAssignment(alice=(theta, 0.0), bob=(0.0, 0.0)), bins=180, threshold_bins=16)

        thetas = [0.7, 2.1]
        seed = 19
        n = 40_000
        points = theta_sweep(factory, thetas, n_trials=n, seed=seed)
        for idx, theta in enumerate(thetas):
            model = factory(theta)
            g = stream(seed, "sweep", idx)
            x = np.zeros(n, dtype=np.int64)
            y = np.zeros(n, dtype=np.int64)
            a, b = sample_batch(model, x, y, g)
            pairs = PairedRawData(x=x.astype(np.int8), y=y.astype(np.int8), a=a, b=b)
            final, _ = postselect(pairs)
            est = estimate(final.to_context_table())[SettingPair(0, 0)]
            assert points[idx].e_ab == pytest.approx(est.e_ab, abs=1e-12)
            assert points[idx].n == est.n_pairs

    def test_empty_grid_rejected(self):
        with pytest.raises(AnalysisError):
            theta_sweep(self.singlet_factory(), [])

    def test_mc_needs_seed(self):
        with pytest.raises(AnalysisError):
            theta_sweep(self.singlet_factory(), [0.1], n_trials=100)


class TestPairwiseTables:
    def test_singlet_tables_by_hand(self):
        tables = pairwise_tables(QuantumSingletModel(angles=CANONICAL_ANGLES))
        e = -SQRT2 / 2
        expected = np.array([[1 + e, 1 - e], [1 - e, 1 + e]]) / 4
        np.testing.assert_allclose(tables[SettingPair(0, 0)], expected, atol=1e-12)

    def test_tables_are_distributions(self):
        tables = pairwise_tables(pearle_model(CANONICAL_ANGLES))
        for s in CONTEXTS:
            assert tables[s].sum() == pytest.approx(1.0)
            assert (tables[s] >= -1e-12).all()
