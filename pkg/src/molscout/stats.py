"""Evaluation and hypothesis-testing suite.

Covers the full analysis stack: leave-one-out cross-validation with ranking
and error metrics, additive-level bootstrap confidence intervals, the Wilson
score interval, exact McNemar tests with Holm-Bonferroni correction, Welch's
t-test from summary statistics, the decision-policy ablation, and the
trap-filled-limit trap-density formula.

Conventions pinned here for reproducibility:
  * top-k uses k = ceil(fraction * n), ties at the boundary broken by index;
  * quantiles interpolate linearly at position q * (n - 1);
  * McNemar is the two-sided doubled binomial tail, capped at 1, no mid-p;
  * bootstrap replicate b draws from an RNG stream seeded by (seed, b), so
    parallel execution cannot change results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata
from scipy.stats import t as student_t

from .acquire import AcquisitionConfig, score_pool
from .domain import MoleculeLibrary, ExperimentResult, BenchmarkSheet, training_targets
from .errors import DegenerateStatisticError, ValidationError
from .featurize import FeatureMatrix, SoftProfile, assemble
from .surrogate import FitConfig, GpPosterior, fit, predict

#: Constants used by the trap-density formalism (matching the source tables).
VACUUM_PERMITTIVITY = 8.85e-12  # F / m
ELEMENTARY_CHARGE = 1.6e-19  # C


@dataclass(frozen=True)
class TestResult:
    """Outcome of one hypothesis test."""

    statistic: float
    p_value: float
    method: str
    ci: tuple[float, float] | None = None
    df: float | None = None
    estimate: float | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.p_value <= 1.0):
            raise ValidationError(f"p_value={self.p_value!r} outside [0, 1]")
        if self.ci is not None and self.ci[0] > self.ci[1]:
            raise ValidationError("confidence interval bounds out of order")


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation: Pearson correlation of mean-ranked data.

    Raises DegenerateStatisticError when either rank vector has zero variance
    (all-tied input), where the statistic is undefined.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValidationError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise ValidationError("need at least 2 observations")
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        raise DegenerateStatisticError("rank variance is zero; correlation undefined")
    return float(dx @ dy / math.sqrt(vx * vy))


def _topk_indices(values: np.ndarray, k: int) -> set[int]:
    # Descending by value, ascending by index for boundary ties.
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    return set(order[:k])


def topk_overlap(pred: Sequence[float], truth: Sequence[float], fraction: float) -> float:
    """Fraction of shared members between predicted and true top-k sets."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValidationError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if not (0.0 < fraction <= 1.0):
        raise ValidationError("fraction must lie in (0, 1]")
    k = math.ceil(fraction * len(pred))
    return len(_topk_indices(pred, k) & _topk_indices(truth, k)) / k


def percentile_linear(values: Sequence[float], q: float) -> float:
    """Quantile with linear interpolation at position q * (n - 1)."""
    ys = np.sort(np.asarray(values, dtype=float))
    if len(ys) == 0:
        raise ValidationError("cannot take a quantile of an empty list")
    p = q * (len(ys) - 1)
    lo = math.floor(p)
    hi = min(lo + 1, len(ys) - 1)
    return float(ys[lo] + (ys[hi] - ys[lo]) * (p - lo))


@dataclass(frozen=True)
class LooReport:
    """Leave-one-out evaluation of one representation mode."""

    representation_mode: str
    molecule_ids: tuple[str, ...]
    y_true: tuple[float, ...]
    y_pred: tuple[float, ...]
    spearman: float | None
    topk_overlap: float
    rmse: float
    rmse_improvement_vs_hard: float | None
    fraction: float

    def recomputed_metrics(self) -> tuple[float | None, float, float]:
        """Recompute (spearman, overlap, rmse) from the stored predictions."""
        try:
            rho = spearman(self.y_pred, self.y_true)
        except DegenerateStatisticError:
            rho = None
        ov = topk_overlap(self.y_pred, self.y_true, self.fraction)
        err = np.asarray(self.y_pred) - np.asarray(self.y_true)
        return rho, ov, float(np.sqrt(np.mean(err * err)))


def loo_evaluate(
    library: MoleculeLibrary,
    profiles: Mapping[str, SoftProfile],
    results: Sequence[ExperimentResult],
    mode: str,
    fit_cfg: FitConfig = FitConfig(),
    fraction: float = 0.2,
    compute_hard_baseline: bool = True,
) -> LooReport:
    """Leave-one-out CV over all molecules with measured results.

    Every fold refits both the feature scaler and the GP on the remaining
    molecules (no leakage). ``rmse_improvement_vs_hard`` is
    RMSE(hard) - RMSE(mode), computed with the same folds and seed.
    """
    targets = training_targets(results)
    ids = [rec.id for rec in library.records if rec.id in targets]
    if len(ids) < 3:
        raise ValidationError("leave-one-out needs at least 3 molecules with results")
    mols = [library.get(m) for m in ids]
    y_true = np.array([targets[m] for m in ids])

    preds = np.empty(len(ids))
    for i in range(len(ids)):
        train_ids = ids[:i] + ids[i + 1 :]
        fm = assemble(mols, profiles, mode, training_ids=train_ids)
        gp = fit(fm.rows(train_ids), np.array([targets[m] for m in train_ids]), fit_cfg)
        mu, _ = predict(gp, fm.values[fm.row_index(ids[i])][None, :])
        preds[i] = mu[0]

    try:
        rho = spearman(preds, y_true)
    except DegenerateStatisticError:
        rho = None
    overlap = topk_overlap(preds, y_true, fraction)
    rmse = float(np.sqrt(np.mean((preds - y_true) ** 2)))
    improvement: float | None
    if mode == "hard":
        improvement = 0.0
    elif compute_hard_baseline and library.descriptor_names:
        hard = loo_evaluate(library, profiles, results, "hard", fit_cfg, fraction, compute_hard_baseline=False)
        improvement = hard.rmse - rmse
    else:
        improvement = None
    return LooReport(
        representation_mode=mode,
        molecule_ids=tuple(ids),
        y_true=tuple(float(v) for v in y_true),
        y_pred=tuple(float(v) for v in preds),
        spearman=rho,
        topk_overlap=overlap,
        rmse=rmse,
        rmse_improvement_vs_hard=improvement,
        fraction=fraction,
    )


def representation_ablation(
    library: MoleculeLibrary,
    profiles: Mapping[str, SoftProfile],
    results: Sequence[ExperimentResult],
    fit_cfg: FitConfig = FitConfig(),
    modes: Sequence[str] = ("hard", "mech_soft", "full_soft", "hybrid"),
    fraction: float = 0.2,
) -> dict[str, LooReport]:
    """Run loo_evaluate for several modes with shared folds and seed."""
    reports: dict[str, LooReport] = {}
    hard_rmse: float | None = None
    for mode in modes:
        rep = loo_evaluate(library, profiles, results, mode, fit_cfg, fraction, compute_hard_baseline=False)
        if mode == "hard":
            hard_rmse = rep.rmse
            rep = replace(rep, rmse_improvement_vs_hard=0.0)
        reports[mode] = rep
    if hard_rmse is not None:
        for mode in modes:
            if mode != "hard":
                reports[mode] = replace(reports[mode], rmse_improvement_vs_hard=hard_rmse - reports[mode].rmse)
    return reports


@dataclass(frozen=True)
class BootstrapResult:
    lo: float
    hi: float
    n_success: int
    n_failed: int
    flagged: bool

    def interval(self) -> tuple[float, float]:
        return (self.lo, self.hi)


def bootstrap_ci(
    values: Sequence | np.ndarray,
    metric: Callable[[np.ndarray], float],
    B: int = 10_000,
    seed: int = 0,
    conf: float = 0.95,
) -> BootstrapResult:
    """Percentile bootstrap CI, resampling rows (additive level) with replacement.

    Replicates where the metric is undefined are counted and the result is
    flagged when more than half of them fail; the interval then covers only
    the defined replicates.
    """
    arr = np.asarray(values, dtype=float)
    n = arr.shape[0]
    if n < 2:
        raise ValidationError("need at least 2 observations to bootstrap")
    if B < 100:
        raise ValidationError("B must be >= 100")
    stats: list[float] = []
    failed = 0
    for b in range(B):
        rng = np.random.default_rng([seed, b])
        sample = arr[rng.integers(0, n, size=n)]
        try:
            value = float(metric(sample))
        except DegenerateStatisticError:
            failed += 1
            continue
        if math.isnan(value):
            failed += 1
            continue
        stats.append(value)
    if not stats:
        raise DegenerateStatisticError("metric undefined on every bootstrap replicate")
    alpha = (1.0 - conf) / 2.0
    lo = percentile_linear(stats, alpha)
    hi = percentile_linear(stats, 1.0 - alpha)
    return BootstrapResult(lo=lo, hi=hi, n_success=len(stats), n_failed=failed, flagged=failed > B / 2)


def wilson_interval(k: int, n: int, conf: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n < 1 or not (0 <= k <= n):
        raise ValidationError(f"need 0 <= k <= n with n >= 1, got k={k}, n={n}")
    z = float(ndtri((1.0 + conf) / 2.0))
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom
    # boundary cases are exact in the algebra; avoid last-ulp wobble
    lo = 0.0 if k == 0 else max(0.0, center - half)
    hi = 1.0 if k == n else min(1.0, center + half)
    return (lo, hi)


def mcnemar_exact(b: int, c: int) -> TestResult:
    """Two-sided exact McNemar test on discordant-pair counts.

    p = min(1, 2 * sum_{i<=min(b,c)} C(b+c, i) / 2^(b+c)); p = 1 when b = c = 0.
    """
    if b < 0 or c < 0:
        raise ValidationError("discordant counts must be >= 0")
    n = b + c
    if n == 0:
        p = 1.0
    else:
        tail = sum(math.comb(n, i) for i in range(min(b, c) + 1))
        p = min(1.0, 2 * tail / 2**n)
    return TestResult(statistic=float(b - c), p_value=p, method="mcnemar_exact")


def holm_bonferroni(ps: Sequence[float]) -> list[float]:
    """Step-down Holm-Bonferroni adjustment, order-preserving on the input."""
    for p in ps:
        if not (0.0 <= p <= 1.0):
            raise ValidationError(f"p-value {p!r} outside [0, 1]")
    m = len(ps)
    order = sorted(range(m), key=lambda i: ps[i])
    adjusted = [0.0] * m
    running = 0.0
    for j, i in enumerate(order):
        running = max(running, (m - j) * ps[i])
        adjusted[i] = min(1.0, running)
    return adjusted


def welch_t(m1: float, s1: float, n1: int, m2: float, s2: float, n2: int, conf: float = 0.95) -> TestResult:
    """Two-sided Welch's t-test from group summary statistics.

    Returns the t statistic, Welch-Satterthwaite df, two-sided p, and a
    confidence interval on the mean difference m1 - m2.
    """
    if n1 < 2 or n2 < 2:
        raise ValidationError("both groups need n >= 2")
    if s1 <= 0 or s2 <= 0:
        raise ValidationError("both groups need positive standard deviation")
    v1 = s1 * s1 / n1
    v2 = s2 * s2 / n2
    se = math.sqrt(v1 + v2)
    if se == 0.0:
        raise ValidationError("zero pooled standard error")
    diff = m1 - m2
    t = diff / se
    df = (v1 + v2) ** 2 / (v1 * v1 / (n1 - 1) + v2 * v2 / (n2 - 1))
    p = 2.0 * float(student_t.sf(abs(t), df))
    tq = float(student_t.ppf((1.0 + conf) / 2.0, df))
    ci = (diff - tq * se, diff + tq * se)
    return TestResult(statistic=t, p_value=min(p, 1.0), method="welch_t", ci=ci, df=df, estimate=diff)


def loo_report_cis(
    report: LooReport,
    hard_report: LooReport | None = None,
    B: int = 10_000,
    seed: int = 0,
    conf: float = 0.95,
) -> dict[str, BootstrapResult]:
    """Additive-level bootstrap CIs for one LOO report's metrics.

    The rmse_improvement CI needs the hard-baseline predictions over the same
    molecules so replicates stay paired.
    """
    pred = np.asarray(report.y_pred)
    true = np.asarray(report.y_true)
    cols = [pred, true]
    if hard_report is not None:
        if hard_report.molecule_ids != report.molecule_ids:
            raise ValidationError("hard baseline covers different molecules")
        cols.append(np.asarray(hard_report.y_pred))
    data = np.column_stack(cols)

    def m_spearman(s: np.ndarray) -> float:
        return spearman(s[:, 0], s[:, 1])

    def m_overlap(s: np.ndarray) -> float:
        return topk_overlap(s[:, 0], s[:, 1], report.fraction)

    def m_rmse(s: np.ndarray) -> float:
        return float(np.sqrt(np.mean((s[:, 0] - s[:, 1]) ** 2)))

    out = {
        "spearman": bootstrap_ci(data, m_spearman, B, seed, conf),
        "topk_overlap": bootstrap_ci(data, m_overlap, B, seed, conf),
        "rmse": bootstrap_ci(data, m_rmse, B, seed, conf),
    }
    if hard_report is not None:

        def m_improvement(s: np.ndarray) -> float:
            rmse_mode = float(np.sqrt(np.mean((s[:, 0] - s[:, 1]) ** 2)))
            rmse_hard = float(np.sqrt(np.mean((s[:, 2] - s[:, 1]) ** 2)))
            return rmse_hard - rmse_mode

        out["rmse_improvement"] = bootstrap_ci(data, m_improvement, B, seed, conf)
    return out


@dataclass(frozen=True)
class PolicySummary:
    policy: str
    mean_mu: float
    mean_sigma: float
    mean_ei: float
    overlap_with_ei: float
    std_mu: float | None = None
    std_sigma: float | None = None
    std_ei: float | None = None
    std_overlap: float | None = None


@dataclass(frozen=True)
class AblationReport:
    k: int
    random_replicates: int
    policies: tuple[PolicySummary, ...]

    def get(self, policy: str) -> PolicySummary:
        for p in self.policies:
            if p.policy == policy:
                return p
        raise KeyError(policy)


def _topk_summary(scored, k: int) -> tuple[set[str], float, float, float]:
    top = sorted(scored, key=lambda c: c.rank)[:k]
    ids = {c.molecule_id for c in top}
    return (
        ids,
        float(np.mean([c.mu for c in top])),
        float(np.mean([c.sigma for c in top])),
        float(np.mean([c.ei for c in top])),
    )


def policy_ablation(
    gp: GpPosterior,
    fm: FeatureMatrix,
    pool_ids: Sequence[str],
    k: int = 50,
    random_replicates: int = 20,
    seed: int = 0,
    base_cfg: AcquisitionConfig = AcquisitionConfig(),
) -> AblationReport:
    """Compare top-k shortlists from the four decision policies on one pool.

    Deterministic policies are reported once; the random policy is reported as
    mean and std over seeded replicates. Overlaps are measured against the
    EI-policy shortlist.
    """
    if k > len(pool_ids):
        raise ValidationError(f"k={k} exceeds pool size {len(pool_ids)}")
    summaries: list[PolicySummary] = []
    ei_ids: set[str] = set()
    for policy in ("ei", "mean", "uncertainty"):
        scored = score_pool(gp, fm, pool_ids, replace(base_cfg, policy=policy))
        ids, mean_mu, mean_sigma, mean_ei = _topk_summary(scored, k)
        if policy == "ei":
            ei_ids = ids
        summaries.append(
            PolicySummary(
                policy=policy,
                mean_mu=mean_mu,
                mean_sigma=mean_sigma,
                mean_ei=mean_ei,
                overlap_with_ei=len(ids & ei_ids) / k,
            )
        )
    rep_stats = np.empty((random_replicates, 4))
    for r in range(random_replicates):
        rep_seed = int(np.random.default_rng([seed, r]).integers(0, 2**31 - 1))
        scored = score_pool(gp, fm, pool_ids, replace(base_cfg, policy="random", seed=rep_seed))
        ids, mean_mu, mean_sigma, mean_ei = _topk_summary(scored, k)
        rep_stats[r] = (mean_mu, mean_sigma, mean_ei, len(ids & ei_ids) / k)
    means = rep_stats.mean(axis=0)
    stds = rep_stats.std(axis=0)
    summaries.append(
        PolicySummary(
            policy="random",
            mean_mu=float(means[0]),
            mean_sigma=float(means[1]),
            mean_ei=float(means[2]),
            overlap_with_ei=float(means[3]),
            std_mu=float(stds[0]),
            std_sigma=float(stds[1]),
            std_ei=float(stds[2]),
            std_overlap=float(stds[3]),
        )
    )
    return AblationReport(k=k, random_replicates=random_replicates, policies=tuple(summaries))


@dataclass(frozen=True)
class BenchmarkRow:
    model: str
    correct: int
    total: int
    accuracy: float
    wilson_lo: float
    wilson_hi: float
    b: int | None = None
    c: int | None = None
    p_raw: float | None = None
    p_adjusted: float | None = None


def benchmark_report(sheet: BenchmarkSheet, reference: str | None = None, conf: float = 0.95) -> list[BenchmarkRow]:
    """Accuracy with Wilson CI per model, plus exact McNemar tests of every
    other model against the reference (highest accuracy by default),
    Holm-Bonferroni-adjusted across those comparisons."""
    models = sheet.models()
    if reference is None:
        reference = max(models, key=lambda m: (sheet.accuracy(m)[0], m))
    if reference not in models:
        raise ValidationError(f"reference model {reference!r} not in sheet")
    others = [m for m in models if m != reference]
    raw_ps: list[float] = []
    pairs: dict[str, tuple[int, int, float]] = {}
    for m in others:
        b, c = sheet.discordant(reference, m)
        res = mcnemar_exact(b, c)
        pairs[m] = (b, c, res.p_value)
        raw_ps.append(res.p_value)
    adjusted = holm_bonferroni(raw_ps) if raw_ps else []
    adj_map = dict(zip(others, adjusted))

    rows: list[BenchmarkRow] = []
    for m in models:
        k, n = sheet.accuracy(m)
        lo, hi = wilson_interval(k, n, conf)
        if m == reference:
            rows.append(BenchmarkRow(model=m, correct=k, total=n, accuracy=k / n, wilson_lo=lo, wilson_hi=hi))
        else:
            b, c, p_raw = pairs[m]
            rows.append(
                BenchmarkRow(
                    model=m, correct=k, total=n, accuracy=k / n, wilson_lo=lo, wilson_hi=hi,
                    b=b, c=c, p_raw=p_raw, p_adjusted=adj_map[m],
                )
            )
    return rows


def trap_density(epsilon_r: float, v_tfl: float, thickness: float) -> float:
    """Trap density from the trap-filled-limit voltage, in cm^-3.

    N_t = 2 * eps_r * eps_0 * V_TFL / (e * L^2), evaluated in SI units and
    converted from m^-3 to cm^-3. ``thickness`` is in meters.
    """
    if epsilon_r <= 0 or v_tfl <= 0 or thickness <= 0:
        raise ValidationError("all trap-density inputs must be positive")
    per_m3 = 2.0 * epsilon_r * VACUUM_PERMITTIVITY * v_tfl / (ELEMENTARY_CHARGE * thickness * thickness)
    return per_m3 / 1e6
