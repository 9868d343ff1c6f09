"""Intervention-effect estimation on daily proportion series.

The estimator is an interrupted time series: an OLS model fitted on the
pre-window (intercept, optional control-series covariate, optional weekday
dummies) predicts the post-window counterfactual, and the effect is the
mean of actual minus predicted. Inference uses placebo dates drawn from
the pre-period, re-running the identical pipeline at each one. This is a
frequentist stand-in for Bayesian structural time series and is labelled
as such in every output.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from pathlib import Path
from typing import IO, Mapping, Sequence

import numpy as np

from .analytics import Point
from .errors import InsufficientData, TooFewPlacebos
from .firewall import Group
from .intel import TrafficClass
from .synth import CLASSES, Intervention, SynthProfile, simulate_daily, with_intervention

log = logging.getLogger(__name__)

METHOD = "ITS-OLS with placebo permutation (frequentist surrogate for Bayesian structural time series)"
MIN_PRE_DAYS = 14
MIN_POST_DAYS = 7
MIN_DISTINCT_PLACEBOS = 100
MIN_TRIALS = 20


class Metric(str, enum.Enum):
    MALICIOUS = "malicious_proportion"
    GREY = "grey_proportion"

    @property
    def cls(self) -> TrafficClass:
        return TrafficClass.MALICIOUS if self is Metric.MALICIOUS else TrafficClass.GREY


@dataclass(frozen=True)
class ItsConfig:
    metric: Metric = Metric.GREY
    pre_window: int = 90
    post_window: int = 60
    use_control_covariate: bool = True
    weekday_dummies: bool = True
    n_permutations: int = 1000
    alpha: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        if self.pre_window < MIN_PRE_DAYS:
            raise ValueError(f"pre_window must be >= {MIN_PRE_DAYS}")
        if self.post_window < MIN_POST_DAYS:
            raise ValueError(f"post_window must be >= {MIN_POST_DAYS}")
        if self.n_permutations < 100:
            raise ValueError("n_permutations must be >= 100")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must be in (0, 1)")


@dataclass
class FitResult:
    coefficients: dict[str, float]
    stderr: dict[str, float]
    n_pre: int
    degenerate: bool
    residual_sd: float
    post_dates: list[date]
    actual: np.ndarray
    predicted: np.ndarray

    @property
    def n_post(self) -> int:
        return len(self.post_dates)

    @property
    def effect(self) -> float:
        return float(np.mean(self.actual - self.predicted))


@dataclass(frozen=True)
class EffectEstimate:
    effect: float
    relative_effect: float | None
    ci_low: float
    ci_high: float
    p_value: float
    n_defined_days_pre: int
    n_defined_days_post: int
    n_placebos: int = 0
    distinct_placebos: int = 0
    degenerate: bool = False
    warnings: tuple[str, ...] = ()
    method: str = METHOD

    def significant(self, alpha: float = 0.05) -> bool:
        return self.p_value < alpha


def _values(series: Sequence[Point] | Mapping[date, float | None]) -> dict[date, float]:
    if isinstance(series, Mapping):
        return {d: float(v) for d, v in series.items() if v is not None}
    return {p.date: float(p.value) for p in series if p.defined}


def _window(start: date, n: int) -> list[date]:
    return [start + timedelta(days=i) for i in range(n)]


def _design(days: Sequence[date], control: dict[date, float] | None, dummies: bool) -> tuple[list[str], np.ndarray]:
    names, cols = ["intercept"], [np.ones(len(days))]
    if control is not None:
        names.append("control")
        cols.append(np.array([control[d] for d in days]))
    if dummies:
        wd = np.array([d.weekday() for d in days])
        for k in range(1, 7):  # Monday is the baseline
            names.append(f"weekday_{k}")
            cols.append((wd == k).astype(float))
    return names, np.column_stack(cols)


def _fit(
    treated: dict[date, float],
    control: dict[date, float] | None,
    when: date,
    cfg: ItsConfig,
) -> FitResult:
    def usable(d: date) -> bool:
        return d in treated and (control is None or d in control)

    pre = [d for d in _window(when - timedelta(days=cfg.pre_window), cfg.pre_window) if usable(d)]
    post = [d for d in _window(when, cfg.post_window) if usable(d)]
    if len(pre) < MIN_PRE_DAYS:
        raise InsufficientData(f"{len(pre)} defined pre-window days before {when}, need {MIN_PRE_DAYS}")
    if len(post) < MIN_POST_DAYS:
        raise InsufficientData(f"{len(post)} defined post-window days from {when}, need {MIN_POST_DAYS}")
    names, x_pre = _design(pre, control, cfg.weekday_dummies)
    _, x_post = _design(post, control, cfg.weekday_dummies)
    y = np.array([treated[d] for d in pre])
    # drop regressors that do not vary over the pre-window
    keep = [0] + [j for j in range(1, len(names)) if np.ptp(x_pre[:, j]) > 0]
    degenerate = control is not None and 1 not in keep
    names = [names[j] for j in keep]
    x_pre, x_post = x_pre[:, keep], x_post[:, keep]
    if len(keep) == 1:
        beta = np.array([math.fsum(y) / len(y)])
    else:
        beta, *_ = np.linalg.lstsq(x_pre, y, rcond=None)
    resid = y - x_pre @ beta
    dof = len(y) - len(beta)
    sigma2 = float(resid @ resid) / dof if dof > 0 else float("nan")
    try:
        cov = sigma2 * np.linalg.inv(x_pre.T @ x_pre)
        se = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        se = np.full(len(beta), float("nan"))
    predicted = np.full(len(post), beta[0]) if len(keep) == 1 else x_post @ beta
    return FitResult(
        coefficients={n: float(b) for n, b in zip(names, beta)},
        stderr={n: float(s) for n, s in zip(names, se)},
        n_pre=len(pre),
        degenerate=degenerate,
        residual_sd=math.sqrt(sigma2) if sigma2 == sigma2 else float("nan"),
        post_dates=post,
        actual=np.array([treated[d] for d in post]),
        predicted=predicted,
    )


def fit_counterfactual(
    treated: Sequence[Point] | Mapping[date, float | None],
    control: Sequence[Point] | Mapping[date, float | None] | None,
    intervention_date: date,
    cfg: ItsConfig,
) -> FitResult:
    """Fit the pre-window model and predict each defined post-window day.

    Days undefined in either series are excluded pairwise. When the control
    covariate has no variance the fit falls back to the pre-window mean
    (plus dummies) and ``degenerate`` is set.
    """
    ctrl = _values(control) if (cfg.use_control_covariate and control is not None) else None
    if cfg.use_control_covariate and control is None:
        raise InsufficientData("control series required when the control covariate is enabled")
    return _fit(_values(treated), ctrl, intervention_date, cfg)


def placebo_dates(first: date, intervention_date: date, cfg: ItsConfig) -> list[date]:
    """Dates whose pre and post windows both fit between ``first`` and the intervention."""
    lo = first + timedelta(days=cfg.pre_window)
    hi = intervention_date - timedelta(days=cfg.post_window)
    return [lo + timedelta(days=i) for i in range((hi - lo).days + 1)]


def estimate_effect(
    treated: Sequence[Point] | Mapping[date, float | None],
    control: Sequence[Point] | Mapping[date, float | None] | None,
    intervention_date: date,
    cfg: ItsConfig,
    *,
    first_date: date | None = None,
) -> EffectEstimate:
    """Point estimate plus placebo-permutation p-value and interval.

    ``first_date`` defaults to the earliest date present in ``treated``.
    """
    y = _values(treated)
    ctrl = _values(control) if (cfg.use_control_covariate and control is not None) else None
    if cfg.use_control_covariate and control is None:
        raise InsufficientData("control series required when the control covariate is enabled")
    fit = _fit(y, ctrl, intervention_date, cfg)
    effect = fit.effect
    cf_mean = float(np.mean(fit.predicted))
    relative = effect / cf_mean if cf_mean != 0 else None

    if first_date is None:
        all_dates = [p.date for p in treated] if not isinstance(treated, Mapping) else list(treated)
        first_date = min(all_dates)
    effects: dict[date, float] = {}
    for when in placebo_dates(first_date, intervention_date, cfg):
        try:
            effects[when] = _fit(y, ctrl, when, cfg).effect
        except InsufficientData:
            continue
    if not effects:
        raise TooFewPlacebos(
            f"no placebo date fits {cfg.pre_window}+{cfg.post_window} days between {first_date} and {intervention_date}")
    warnings = []
    candidates = sorted(effects)
    rng = np.random.default_rng(cfg.rng_seed)
    replace_draws = len(candidates) < cfg.n_permutations
    if len(candidates) < MIN_DISTINCT_PLACEBOS:
        warnings.append(f"only {len(candidates)} distinct placebo dates; sampled with replacement")
    picks = rng.choice(len(candidates), size=cfg.n_permutations, replace=replace_draws)
    null = np.sort(np.array([effects[candidates[i]] for i in picks]))
    # ties within float noise count as "at least as extreme"
    p_value = float(np.mean(np.abs(null) >= abs(effect) - 1e-12))
    q_lo, q_hi = np.quantile(null, [cfg.alpha / 2, 1 - cfg.alpha / 2])
    ci_low, ci_high = effect - float(q_hi), effect - float(q_lo)
    if not ci_low <= effect <= ci_high:
        warnings.append("placebo distribution does not straddle zero; interval widened to contain the estimate")
        ci_low, ci_high = min(ci_low, effect), max(ci_high, effect)
    if fit.degenerate:
        warnings.append("control covariate has no pre-window variance; mean model used")
    return EffectEstimate(
        effect=effect,
        relative_effect=relative,
        ci_low=ci_low,
        ci_high=ci_high,
        p_value=p_value,
        n_defined_days_pre=fit.n_pre,
        n_defined_days_post=fit.n_post,
        n_placebos=int(cfg.n_permutations),
        distinct_placebos=len(candidates),
        degenerate=fit.degenerate,
        warnings=tuple(warnings),
    )


# -- synthetic experiments --------------------------------------------------

@dataclass(frozen=True)
class Experiment:
    """Date layout for synthetic calibration and power runs.

    The default range gives the 90-day pre / 60-day post windows about 150
    distinct placebo dates.
    """

    treated_org: str = "green"
    intervention_date: date = date(2019, 1, 30)
    start: date = date(2018, 4, 1)
    end: date = date(2019, 3, 31)


def _proportions(days, org_ids: set[str], cls: TrafficClass) -> dict[date, float | None]:
    col = CLASSES.index(cls)
    totals = sum(o.class_totals() for o in days if o.org_id in org_ids)
    out = {}
    for d, row in zip(days[0].dates, totals):
        total = int(row.sum())
        out[d] = row[col] / total if total else None
    return out


def simulated_series(
    profiles: Sequence[SynthProfile], exp: Experiment, seed: int, cls: TrafficClass
) -> tuple[dict[date, float | None], dict[date, float | None]]:
    """Treated-org and pooled-control proportion series from the daily simulator."""
    days = simulate_daily(profiles, exp.start, exp.end, seed)
    controls = {p.org_id for p in profiles if p.group is Group.CONTROL}
    return _proportions(days, {exp.treated_org}, cls), _proportions(days, controls, cls)


def _with_effect(profiles: Sequence[SynthProfile], exp: Experiment, metric: Metric, mult: float) -> list[SynthProfile]:
    if mult == 1.0:
        iv = None
    elif metric is Metric.GREY:
        iv = Intervention(exp.intervention_date, mult, 1.0)
    else:
        iv = Intervention(exp.intervention_date, 1.0, mult)
    return [with_intervention(p, iv) if p.org_id == exp.treated_org else with_intervention(p, None) for p in profiles]


@dataclass(frozen=True)
class TrialResult:
    multiplier: float
    seed: int
    estimate: EffectEstimate
    true_effect: float


def run_trial(
    profiles: Sequence[SynthProfile], exp: Experiment, cfg: ItsConfig, multiplier: float, seed: int
) -> TrialResult:
    """One simulated dataset; truth is the paired run without the intervention."""
    cls = cfg.metric.cls
    treated, control = simulated_series(_with_effect(profiles, exp, cfg.metric, multiplier), exp, seed, cls)
    est = estimate_effect(treated, control, exp.intervention_date, replace(cfg, rng_seed=seed), first_date=exp.start)
    if multiplier == 1.0:
        truth = 0.0
    else:
        base, _ = simulated_series(_with_effect(profiles, exp, cfg.metric, 1.0), exp, seed, cls)
        post = [exp.intervention_date + timedelta(days=i) for i in range(cfg.post_window)]
        diffs = [treated[d] - base[d] for d in post if treated.get(d) is not None and base.get(d) is not None]
        truth = float(np.mean(diffs))
    return TrialResult(multiplier, seed, est, truth)


@dataclass(frozen=True)
class PowerRow:
    multiplier: float
    n_trials: int
    detection_rate: float
    mean_effect: float
    mean_true_effect: float
    bias: float | None  # (mean estimate - mean truth) / |mean truth|; None at the null
    mean_p_value: float


@dataclass
class PowerReport:
    rows: list[PowerRow]
    cfg: ItsConfig
    experiment: Experiment
    trials: list[TrialResult] = field(default_factory=list, repr=False)


def power_analysis(
    profiles: Sequence[SynthProfile],
    effect_grid: Sequence[float],
    n_trials: int,
    cfg: ItsConfig,
    *,
    experiment: Experiment = Experiment(),
    seed: int = 0,
) -> PowerReport:
    """Full factorial over ``effect_grid`` x ``n_trials`` simulated datasets.

    ``profiles`` must contain the treated org and at least one control org;
    trial ``k`` uses seed ``seed + k`` for every grid point.
    """
    if n_trials < MIN_TRIALS:
        raise ValueError(f"n_trials must be >= {MIN_TRIALS}")
    ids = {p.org_id for p in profiles}
    if experiment.treated_org not in ids:
        raise ValueError(f"treated org {experiment.treated_org!r} not in profiles")
    if not any(p.group is Group.CONTROL for p in profiles):
        raise ValueError("power analysis needs at least one control profile")
    rows, trials = [], []
    for mult in effect_grid:
        batch = [run_trial(profiles, experiment, cfg, float(mult), seed + k) for k in range(n_trials)]
        trials += batch
        est = np.array([t.estimate.effect for t in batch])
        truth = np.array([t.true_effect for t in batch])
        mean_truth = float(truth.mean())
        rows.append(PowerRow(
            multiplier=float(mult),
            n_trials=n_trials,
            detection_rate=float(np.mean([t.estimate.significant(cfg.alpha) for t in batch])),
            mean_effect=float(est.mean()),
            mean_true_effect=mean_truth,
            bias=(float(est.mean()) - mean_truth) / abs(mean_truth) if mean_truth != 0 else None,
            mean_p_value=float(np.mean([t.estimate.p_value for t in batch])),
        ))
    return PowerReport(rows, cfg, experiment, trials)


# -- CSV output -------------------------------------------------------------

EFFECT_COLUMNS = ("org", "metric", "intervention_date", "effect", "relative_effect", "ci_low", "ci_high",
                  "p_value", "n_defined_days_pre", "n_defined_days_post", "n_placebos", "distinct_placebos",
                  "degenerate", "method", "warnings")
POWER_COLUMNS = ("multiplier", "n_trials", "detection_rate", "mean_effect", "mean_true_effect", "bias",
                 "mean_p_value", "alpha", "pre_window", "post_window", "method")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@contextmanager
def _sink(target: str | Path | IO[str]):
    if hasattr(target, "write"):
        yield target
    else:
        with Path(target).open("w", newline="", encoding="utf-8") as handle:
            yield handle


def write_effect_csv(rows: Sequence[tuple[str, Metric, date, EffectEstimate]], target: str | Path | IO[str]) -> None:
    with _sink(target) as handle:
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(EFFECT_COLUMNS)
        for org, metric, when, e in rows:
            w.writerow([_cell(v) for v in (
                org, Metric(metric).value, when.isoformat(), e.effect, e.relative_effect, e.ci_low, e.ci_high,
                e.p_value, e.n_defined_days_pre, e.n_defined_days_post, e.n_placebos, e.distinct_placebos,
                e.degenerate, e.method, "; ".join(e.warnings))])


def write_power_csv(report: PowerReport, target: str | Path | IO[str]) -> None:
    with _sink(target) as handle:
        w = csv.writer(handle, lineterminator="\n")
        w.writerow(POWER_COLUMNS)
        for r in report.rows:
            w.writerow([_cell(v) for v in (
                r.multiplier, r.n_trials, r.detection_rate, r.mean_effect, r.mean_true_effect, r.bias,
                r.mean_p_value, report.cfg.alpha, report.cfg.pre_window, report.cfg.post_window, METHOD)])
