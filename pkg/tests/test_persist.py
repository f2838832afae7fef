"""Criterion checkers: classification, invasion, drift, cyclic conditions."""

import math

import numpy as np
import pytest

from stochpop.engine import Box, SimConfig, simulate
from stochpop.env import Constant, EnvSpec, LogNormal, Normal, Uniform
from stochpop.errors import ConfigurationError, FaceDegenerateError
from stochpop.models import (
    AffineChain,
    BevertonHolt,
    Hassell,
    Lottery,
    RickerCompetition,
    RickerScalar,
    RpsLottery,
)
from stochpop.persist import (
    DriftConstruction,
    affine_domination_audit,
    boundary_invasion_report,
    drift_bounded_check,
    drift_construction,
    drift_ergodic_check,
    find_persistence_weights,
    invasion_rate,
    lottery_taylor_rate,
    mean_percapita_growth_at,
    rps_condition,
    scalar_classify,
)

# ---------------------------------------------------------------------------
# point growth rates


def test_hassell_growth_at_zero_is_mean_log_fitness():
    env = EnvSpec((LogNormal(0.2, 0.3), Uniform(0.5, 1.5)))
    est = mean_percapita_growth_at(Hassell(), env, np.zeros(1), 0, 20_000, seed=1)
    assert abs(est.mean - 0.2) < 3 * est.std_error


def test_hassell_growth_identity_in_density():
    # E[log f(x)] = E[log lam] - E[b] log(1 + x)
    env = EnvSpec((LogNormal(0.2, 0.3), Uniform(0.5, 1.5)))
    est = mean_percapita_growth_at(Hassell(), env, np.array([3.0]), 0, 20_000, seed=2)
    assert abs(est.mean - (0.2 - 1.0 * math.log(4.0))) < 3 * est.std_error


def test_competition_growth_at_origin_is_mean_rate():
    env = EnvSpec((Normal(1.0, 0.3), Normal(0.8, 0.3)))
    est = mean_percapita_growth_at(RickerCompetition(0.6, 0.5), env, np.zeros(2), 0, 20_000, seed=3)
    assert abs(est.mean - 1.0) < 3 * est.std_error


def test_constant_environment_growth_is_exact():
    env = EnvSpec((Constant(2.0), Constant(1.0)))
    est = mean_percapita_growth_at(Hassell(), env, np.zeros(1), 0, 100, seed=4)
    assert est.mean == pytest.approx(math.log(2.0), abs=1e-15)
    assert est.std_error == 0.0


# ---------------------------------------------------------------------------
# invasion rates


def test_rps_vertex_invasion_rates_are_exact_for_constants():
    env = EnvSpec((Constant(3.0), Constant(2.0), Constant(1.0)))
    m = RpsLottery(0.1)
    cfg = SimConfig(seed=5, replicates=1, burn_in=100, horizon=2100)
    up = invasion_rate(m, env, cfg, invader=2, resident_support=(0,))
    down = invasion_rate(m, env, cfg, invader=1, resident_support=(0,))
    assert up.mean == pytest.approx(math.log(1.05), abs=1e-12)
    assert up.std_error == 0.0
    assert down.mean == pytest.approx(math.log(0.95), abs=1e-12)


def test_lottery_exchangeable_invasion_symmetry():
    env = EnvSpec((LogNormal(1.0, 0.3), LogNormal(1.0, 0.3)))
    m = Lottery(2, 0.3)
    cfg = SimConfig(seed=6, replicates=2, burn_in=500, horizon=30500)
    r12 = invasion_rate(m, env, cfg, invader=0, resident_support=(1,))
    r21 = invasion_rate(m, env, cfg, invader=1, resident_support=(0,))
    assert abs(r12.mean - r21.mean) < 3 * math.hypot(r12.std_error, r21.std_error)
    assert r12.mean > 0 and r21.mean > 0


def test_invasion_rate_validates_support():
    env = EnvSpec((Normal(1.0, 0.3), Normal(0.8, 0.3)))
    m = RickerCompetition(0.6, 0.5)
    cfg = SimConfig(seed=1, horizon=100)
    with pytest.raises(ConfigurationError):
        invasion_rate(m, env, cfg, invader=0, resident_support=(0,))
    with pytest.raises(ConfigurationError):
        invasion_rate(m, env, cfg, invader=3, resident_support=(1,))


def test_degenerate_face_raises():
    # the cyclic two-species face collapses to a vertex, so its resident
    # community loses a member and the invasion rate is ill-posed
    env = EnvSpec((Constant(3.0), Constant(2.0), Constant(1.0)))
    m = RpsLottery(0.5)
    cfg = SimConfig(seed=7, replicates=1, burn_in=100, horizon=5100)
    with pytest.raises(FaceDegenerateError):
        invasion_rate(m, env, cfg, invader=2, resident_support=(0, 1))


# ---------------------------------------------------------------------------
# scalar classification


def _hassell_env(log_mean):
    return EnvSpec((LogNormal(log_mean, 0.3), Constant(1.0)))


def test_classify_extinction():
    cfg = SimConfig(seed=8, replicates=20, burn_in=0, horizon=5000, eta_grid=(0.01,))
    v = scalar_classify(Hassell(), _hassell_env(-0.2), cfg)
    assert v.kind == "extinction"
    assert v.decision_margin > 3
    assert v.evidence["extinct_fraction"].mean == 1.0


def test_classify_persistent():
    cfg = SimConfig(seed=9, replicates=5, burn_in=2000, horizon=22000, eta_grid=(0.01,))
    v = scalar_classify(Hassell(), _hassell_env(0.3), cfg)
    assert v.kind == "persistent"
    assert v.evidence["lambda_inf"].mean == -np.inf
    assert v.evidence["occupation[S_eta=0.01]"].mean <= 0.05


def test_classify_explosion_without_density_dependence():
    env = EnvSpec((Constant(2.0), Constant(0.0)))
    cfg = SimConfig(seed=10, replicates=2, burn_in=10, horizon=200)
    v = scalar_classify(Hassell(), env, cfg)
    assert v.kind == "explosion"


def test_classify_inconclusive_at_boundary():
    cfg = SimConfig(seed=11, replicates=2, burn_in=100, horizon=2100)
    v = scalar_classify(Hassell(), _hassell_env(0.0), cfg)
    assert v.kind == "inconclusive"


def test_classify_rejects_non_scalar():
    env = EnvSpec((Normal(1.0, 0.3), Normal(0.8, 0.3)))
    with pytest.raises(ConfigurationError):
        scalar_classify(RickerCompetition(0.6, 0.5), env, SimConfig(seed=1, horizon=100))


@pytest.mark.parametrize(
    "model,envspec,expected",
    [
        (Hassell(), _hassell_env(-0.25), "extinction"),
        (Hassell(), _hassell_env(0.4), "persistent"),
        (RickerScalar(), EnvSpec((Normal(-0.3, 0.3), Constant(1.0))), "extinction"),
        (RickerScalar(), EnvSpec((Normal(0.8, 0.3), Constant(1.0))), "persistent"),
        (BevertonHolt(s=0.3), EnvSpec((LogNormal(0.4, 0.2), Constant(1.0))), "persistent"),
    ],
    ids=["hassell-ext", "hassell-pers", "ricker-ext", "ricker-pers", "bh-pers"],
)
def test_classifier_agrees_with_long_run_simulation(model, envspec, expected):
    cfg = SimConfig(seed=12, replicates=10, burn_in=2000, horizon=22000, eta_grid=(0.01,))
    v = scalar_classify(model, envspec, cfg)
    assert v.kind == expected
    if expected == "extinction":
        assert v.evidence["extinct_fraction"].mean == 1.0
    else:
        assert v.evidence["extinct_fraction"].mean == 0.0
        assert v.evidence["occupation[S_eta=0.01]"].mean < 0.05


# ---------------------------------------------------------------------------
# boundary reports and weights


def test_competition_boundary_report_persistent():
    env = EnvSpec((Normal(1.0, 0.3), Normal(0.8, 0.3)))
    m = RickerCompetition(0.6, 0.5)
    cfg = SimConfig(seed=13, replicates=2, burn_in=2000, horizon=32000)
    table, verdict = boundary_invasion_report(m, env, cfg)
    assert verdict.kind == "persistent"
    assert not table.not_permanent
    rates = {row.support: row.rates for row in table.rows}
    assert abs(rates[(1,)][0].mean - 0.52) < 3 * rates[(1,)][0].std_error
    assert abs(rates[(0,)][1].mean - 0.30) < 3 * rates[(0,)][1].std_error
    # supported species hover at zero average log growth
    for row in table.rows:
        for i in row.support:
            assert abs(row.rates[i].mean) < 3 * row.rates[i].std_error
    weights = find_persistence_weights(table)
    assert weights is not None and np.all(weights > 0)


def test_deterministic_lottery_dominance_flags_not_permanent():
    env = EnvSpec((Constant(3.0), Constant(2.0)))
    m = Lottery(2, 0.2)
    cfg = SimConfig(seed=14, replicates=1, burn_in=100, horizon=2100)
    table, verdict = boundary_invasion_report(m, env, cfg)
    assert table.not_permanent
    assert verdict.kind == "inconclusive"
    assert find_persistence_weights(table) is None


def test_degenerate_face_blocks_permanence_claim():
    # species 2 cannot persist alone, so its face row degenerates and the
    # report refuses to call the system permanent
    env = EnvSpec((Normal(1.0, 0.3), Normal(-0.5, 0.3)))
    m = RickerCompetition(0.3, 0.3)
    cfg = SimConfig(seed=27, replicates=1, burn_in=500, horizon=5500)
    table, verdict = boundary_invasion_report(m, env, cfg)
    degenerate = [row for row in table.rows if row.degenerate]
    assert degenerate and degenerate[0].support == (1,)
    assert verdict.kind == "inconclusive"
    assert table.annotations


def test_rps_boundary_rows_are_analytic_vertices():
    env = EnvSpec((Constant(3.2), Constant(2.0), Constant(1.0)))
    m = RpsLottery(0.1)
    cfg = SimConfig(seed=15, replicates=1, burn_in=100, horizon=5100)
    table, verdict = boundary_invasion_report(m, env, cfg)
    assert verdict.kind == "persistent"
    assert [row.measure for row in table.rows] == ["analytic_vertex"] * 3
    weights = find_persistence_weights(table)
    assert weights is not None
    assert np.allclose(weights, 1.0 / 3.0, atol=0.02)


def test_weights_infeasible_when_a_face_rejects_everyone():
    env = EnvSpec((Constant(3.0), Constant(2.0), Constant(1.0)))
    m = RpsLottery(0.5)  # exact condition fails at this turnover
    cfg = SimConfig(seed=16, replicates=1, burn_in=100, horizon=2100)
    table, verdict = boundary_invasion_report(m, env, cfg)
    assert find_persistence_weights(table) is None


def test_single_species_weights_trivial():
    from stochpop.engine import RateEstimate
    from stochpop.persist import FaceRow, InvasionTable

    row = FaceRow(support=(), measure="analytic_vertex", rates={0: RateEstimate(0.4, 0.01, 10, 100)})
    assert find_persistence_weights(InvasionTable(rows=[row]))[0] == 1.0
    row_neg = FaceRow(support=(), measure="analytic_vertex", rates={0: RateEstimate(-0.4, 0.01, 10, 100)})
    assert find_persistence_weights(InvasionTable(rows=[row_neg])) is None


# ---------------------------------------------------------------------------
# drift checks


def test_hassell_drift_construction_passes_audit():
    env = _hassell_env(0.3)
    m = Hassell()
    con = drift_construction(m, env, seed=17)
    report = drift_bounded_check(m, env, con, 100_000, seed=17)
    assert report.violations == 0
    assert report.hypotheses_hold
    assert report.e_log_alpha.mean + 3 * report.e_log_alpha.std_error < 0


def test_competition_drift_construction_passes_audit():
    env = EnvSpec((Normal(1.0, 0.3), Normal(0.8, 0.3)))
    m = RickerCompetition(0.6, 0.5)
    con = drift_construction(m, env, seed=18)
    report = drift_bounded_check(m, env, con, 50_000, seed=18)
    assert report.violations == 0
    assert report.hypotheses_hold


def test_drift_verdict_fails_for_unit_alpha():
    env = _hassell_env(0.3)
    m = Hassell()
    con = drift_construction(m, env, seed=19)
    rigged = DriftConstruction(
        name="unit_alpha",
        v_name="identity",
        v=con.v,
        alpha=lambda w: np.ones(w.shape[:-1]),
        beta=con.beta,
        params={},
    )
    report = drift_bounded_check(m, env, rigged, 10_000, seed=19)
    assert report.violations == 0  # alpha = 1 only weakens the bound
    assert not report.hypotheses_hold  # E[log alpha] = 0 is not negative


def test_drift_audit_reports_counterexample():
    env = _hassell_env(0.3)
    m = Hassell()
    con = drift_construction(m, env, seed=20)
    broken = DriftConstruction(
        name="no_beta",
        v_name="identity",
        v=con.v,
        alpha=con.alpha,
        beta=lambda w: np.zeros(w.shape[:-1]),
        params={},
    )
    report = drift_bounded_check(m, env, broken, 10_000, seed=20)
    assert report.violations > 0
    assert report.counterexample is not None
    assert report.counterexample["lhs"] > report.counterexample["rhs"]


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_dominating_chain_stays_above_model(seed):
    env = _hassell_env(0.3)
    m = Hassell()
    con = drift_construction(m, env, seed=seed)
    audit = affine_domination_audit(m, env, con, SimConfig(seed=seed, replicates=3, horizon=10_000))
    assert audit["ok"]
    assert audit["min_slack"] >= 0.0


def test_drift_ergodic_check_toy_contraction():
    envspec = EnvSpec((Constant(0.5), Uniform(0.0, 1.0)))
    chain = AffineChain()

    def v(x):
        return x[..., 0]

    box = Box(((0.0, 10.0),))
    ok = drift_ergodic_check(chain, envspec, v, box, beta=0.4, n_states=200, inner=400, seed=21)
    assert ok["holds"]
    bad = drift_ergodic_check(chain, envspec, v, box, beta=0.99, n_states=200, inner=400, seed=21)
    assert not bad["holds"]
    assert bad["worst_slack"] < 0


def test_drift_ergodic_check_deterministic_is_exact():
    envspec = EnvSpec((Constant(0.5), Constant(0.5)))
    chain = AffineChain()

    def v(x):
        return x[..., 0]

    rep = drift_ergodic_check(chain, envspec, v, Box(((0.0, 10.0),)), beta=0.4, n_states=100, seed=22)
    assert rep["inner"] == 1
    assert rep["holds"]
    assert rep["inner_se_at_worst"] == 0.0


# ---------------------------------------------------------------------------
# cyclic lottery conditions


def test_rps_condition_exact_values():
    env = EnvSpec((Constant(3.2), Constant(2.0), Constant(1.0)))
    rep = rps_condition(env, 0.1, 100)
    expected = math.log(1.06) + math.log(0.95)
    assert rep["exact_lhs"].mean == pytest.approx(expected, abs=1e-12)
    assert rep["exact_lhs"].std_error == 0.0
    assert rep["exact_verdict"] == "persists"


def test_rps_condition_fails_at_high_turnover():
    env = EnvSpec((Constant(3.0), Constant(2.0), Constant(1.0)))
    rep = rps_condition(env, 0.5, 100)
    assert rep["exact_lhs"].mean == pytest.approx(math.log(1.25) + math.log(0.75), abs=1e-12)
    assert rep["exact_verdict"] == "fails"


def test_rps_small_d_boundary_is_inconclusive():
    env = EnvSpec((Constant(3.0), Constant(2.0), Constant(1.0)))
    rep = rps_condition(env, 0.1, 100)
    assert rep["small_d_lhs"].mean == pytest.approx(0.0, abs=1e-12)
    assert rep["small_d_verdict"] == "inconclusive"


def test_rps_condition_validates_ordering():
    env = EnvSpec((Constant(1.0), Constant(2.0), Constant(3.0)))
    with pytest.raises(ConfigurationError):
        rps_condition(env, 0.1, 10)


# ---------------------------------------------------------------------------
# first-order lottery rates


def _vertex_samples(k, vertex, n=4000):
    x = np.zeros((n, k))
    x[:, vertex] = 1.0
    return x


def test_taylor_rate_positive_for_missing_species_under_noise():
    env = EnvSpec((LogNormal(1.0, 0.3),) * 3)
    for invader in (1, 2):
        est = lottery_taylor_rate(env, 0.05, _vertex_samples(3, 0), invader, seed=23)
        assert est.mean - 3 * est.std_error > 0


def test_taylor_rate_zero_without_noise():
    env = EnvSpec((Constant(2.0),) * 3)
    est = lottery_taylor_rate(env, 0.05, _vertex_samples(3, 0), 1, seed=24)
    assert est.mean == 0.0
    assert est.std_error == 0.0


@pytest.mark.parametrize("d", [0.02, 0.05])
def test_taylor_rate_agrees_with_exact_invasion_rate(d):
    env = EnvSpec((LogNormal(1.0, 0.3),) * 3)
    m = Lottery(3, d)
    cfg = SimConfig(seed=25, replicates=1, burn_in=1000, horizon=31000, thinning=10)
    exact = invasion_rate(m, env, cfg, invader=1, resident_support=(0,))
    face = simulate(m.restrict_to_face((0,)), env, cfg.replaced(replicate_base=1 << 22))
    samples = face.replicates[0].thinned_samples
    taylor = lottery_taylor_rate(env, d, samples, 1, seed=25)
    tol = max(3 * math.hypot(exact.std_error, taylor.std_error), 0.25 * d * d)
    assert abs(exact.mean - taylor.mean) < tol


def test_taylor_rate_warns_for_large_turnover():
    env = EnvSpec((Constant(2.0),) * 3)
    with pytest.warns(UserWarning):
        lottery_taylor_rate(env, 0.5, _vertex_samples(3, 0), 1, seed=26)
