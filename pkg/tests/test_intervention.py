import csv
import io
from datetime import date, timedelta

import numpy as np
import pytest

from dnshygiene.errors import InsufficientData, TooFewPlacebos
from dnshygiene.firewall import Group
from dnshygiene.intervention import (
    EFFECT_COLUMNS, POWER_COLUMNS, Experiment, ItsConfig, Metric, estimate_effect, fit_counterfactual,
    placebo_dates, power_analysis, write_effect_csv, write_power_csv,
)
from dnshygiene.synth import SynthProfile, _pools

START = date(2018, 4, 1)
T = date(2019, 1, 30)
DAYS = [START + timedelta(days=i) for i in range((date(2019, 3, 31) - START).days + 1)]


def make_series(seed=0, beta0=0.05, beta1=0.5, weekday=0.02, noise=0.004, step=0.0):
    rng = np.random.default_rng(seed)
    control = {d: 0.1 + 0.03 * np.sin(i / 9) + rng.normal(0, 0.01) for i, d in enumerate(DAYS)}
    treated = {}
    for d in DAYS:
        v = beta0 + beta1 * control[d] + (weekday if d.weekday() >= 5 else 0.0) + rng.normal(0, noise)
        treated[d] = v + (step if d >= T else 0.0)
    return treated, control


def test_identity_fit():
    _, control = make_series(1)
    fit = fit_counterfactual(control, control, T, ItsConfig())
    assert fit.coefficients["control"] == pytest.approx(1.0, abs=1e-9)
    assert fit.coefficients["intercept"] == pytest.approx(0.0, abs=1e-9)
    est = estimate_effect(control, control, T, ItsConfig())
    assert est.effect == pytest.approx(0.0, abs=1e-12) and est.p_value == pytest.approx(1.0)


def test_linear_recovery_within_three_se():
    treated, control = make_series(2)
    fit = fit_counterfactual(treated, control, T, ItsConfig())
    assert abs(fit.coefficients["control"] - 0.5) < 3 * fit.stderr["control"]
    assert abs(fit.coefficients["intercept"] - 0.05) < 3 * fit.stderr["intercept"]
    # weekday dummies: Saturday and Sunday carry the +0.02 shift
    assert abs(fit.coefficients["weekday_5"] - 0.02) < 3 * fit.stderr["weekday_5"]
    assert abs(fit.coefficients["weekday_2"]) < 3 * fit.stderr["weekday_2"]


def test_step_detected():
    treated, control = make_series(3, step=-0.02)
    est = estimate_effect(treated, control, T, ItsConfig())
    assert est.effect == pytest.approx(-0.02, abs=0.004)
    assert est.p_value < 0.05 and est.ci_high < 0 < est.ci_high - est.ci_low
    assert est.ci_low <= est.effect <= est.ci_high
    assert est.distinct_placebos == 155 and est.n_placebos == 1000
    assert est.n_defined_days_pre == 90 and est.n_defined_days_post == 60


def test_no_step_not_significant():
    treated, control = make_series(4)
    est = estimate_effect(treated, control, T, ItsConfig())
    assert abs(est.effect) < 0.003 and est.p_value > 0.05


def test_constant_series_is_degenerate():
    flat = {d: 0.3 for d in DAYS}
    fit = fit_counterfactual(flat, flat, T, ItsConfig())
    assert fit.degenerate and fit.predicted == pytest.approx(np.full(60, 0.3))
    est = estimate_effect(flat, flat, T, ItsConfig())
    assert est.effect == pytest.approx(0.0, abs=1e-12) and est.degenerate
    assert any("no pre-window variance" in w for w in est.warnings)


def test_deterministic_and_seed_sensitive():
    treated, control = make_series(5, step=-0.002)
    a = estimate_effect(treated, control, T, ItsConfig(rng_seed=3))
    b = estimate_effect(treated, control, T, ItsConfig(rng_seed=3))
    assert a == b
    c = estimate_effect(treated, control, T, ItsConfig(rng_seed=4))
    assert c.effect == a.effect


def test_scale_equivariance():
    treated, control = make_series(6, step=-0.01)
    cfg = ItsConfig()
    a = estimate_effect(treated, control, T, cfg)
    b = estimate_effect({d: 10 * v for d, v in treated.items()}, {d: 10 * v for d, v in control.items()}, T, cfg)
    assert b.effect == pytest.approx(10 * a.effect, rel=1e-9)
    assert b.p_value == a.p_value
    assert b.relative_effect == pytest.approx(a.relative_effect, rel=1e-9)


def test_undefined_days_excluded_pairwise():
    treated, control = make_series(7)
    for i in range(0, len(DAYS), 5):
        treated[DAYS[i]] = None
    fit = fit_counterfactual(treated, control, T, ItsConfig())
    assert fit.n_pre == 72 and fit.n_post == 48


def test_insufficient_data():
    treated, control = make_series(8)
    with pytest.raises(InsufficientData):
        estimate_effect(treated, control, START + timedelta(days=10), ItsConfig())
    late = DAYS[-1] - timedelta(days=3)
    with pytest.raises(InsufficientData):
        estimate_effect(treated, control, late, ItsConfig())
    with pytest.raises(InsufficientData):
        estimate_effect(treated, None, T, ItsConfig())


def test_too_few_placebos():
    treated, control = make_series(9)
    with pytest.raises(TooFewPlacebos):
        estimate_effect(treated, control, START + timedelta(days=120), ItsConfig())
    short = START + timedelta(days=90 + 60 + 20)
    est = estimate_effect(treated, control, short, ItsConfig())
    assert est.distinct_placebos == 21 and any("distinct placebo" in w for w in est.warnings)


def test_placebo_dates_range():
    cfg = ItsConfig()
    dates = placebo_dates(START, T, cfg)
    assert dates[0] == START + timedelta(days=90) and dates[-1] == T - timedelta(days=60)
    assert len(dates) == 155


def test_config_validation():
    for kw in ({"pre_window": 13}, {"post_window": 6}, {"n_permutations": 99}, {"alpha": 0}, {"metric": "bogus"}):
        with pytest.raises(ValueError):
            ItsConfig(**kw)


def test_no_covariate_no_dummies():
    treated, control = make_series(10, step=-0.02, beta1=0.0)
    est = estimate_effect(treated, None, T, ItsConfig(use_control_covariate=False, weekday_dummies=False))
    assert est.effect == pytest.approx(-0.02, abs=0.006)


def small_experiment_profiles():
    return [
        SynthProfile("red", Group.CONTROL, 3, 20.0, 2.5, _pools({"counter.yadro.ru": 0.5})),
        SynthProfile("green", Group.TREATMENT, 8, 40.0, 3.0, _pools({"counter.yadro.ru": 40})),
    ]


def test_power_grid_monotone(tmp_path):
    cfg = ItsConfig(metric=Metric.GREY, n_permutations=200)
    rep = power_analysis(small_experiment_profiles(), [1.0, 0.95, 0.8], 20, cfg, seed=100)
    rates = [r.detection_rate for r in rep.rows]
    assert rates[0] <= rates[1] <= rates[2] and rates[2] >= 0.8
    assert rep.rows[0].bias is None and rep.rows[0].mean_true_effect == 0.0
    assert abs(rep.rows[2].bias) < 0.2
    buf = io.StringIO()
    write_power_csv(rep, buf)
    rows = list(csv.reader(io.StringIO(buf.getvalue())))
    assert tuple(rows[0]) == POWER_COLUMNS and len(rows) == 4
    with pytest.raises(ValueError):
        power_analysis(small_experiment_profiles(), [1.0], 5, cfg)
    with pytest.raises(ValueError):
        power_analysis(small_experiment_profiles()[1:], [1.0], 20, cfg)
    with pytest.raises(ValueError):
        power_analysis(small_experiment_profiles(), [1.0], 20, cfg, experiment=Experiment(treated_org="nope"))


def test_effect_csv(tmp_path):
    treated, control = make_series(11, step=-0.01)
    est = estimate_effect(treated, control, T, ItsConfig())
    path = tmp_path / "effect.csv"
    write_effect_csv([("green", Metric.GREY, T, est)], path)
    header, row = list(csv.reader(path.open()))
    assert tuple(header) == EFFECT_COLUMNS
    rec = dict(zip(header, row))
    assert float(rec["effect"]) == est.effect and rec["intervention_date"] == "2019-01-30"
    assert rec["degenerate"] == "false" and rec["metric"] == "grey_proportion"
