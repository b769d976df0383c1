"""Decision policies over a scored candidate pool.

Expected improvement uses a robust incumbent (a quantile of the training
targets, default the 80th percentile) shifted by an exploration offset xi.
For sigma > 0:

    z  = (mu - best - xi) / sigma
    EI = (mu - best - xi) * Phi(z) + sigma * phi(z)

and EI degenerates to max(mu - best - xi, 0) at sigma = 0. Ranks are always a
permutation of the full scored pool; feasibility filtering happens only at
shortlist time so reviewers can still see scores for excluded candidates.
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import ValidationError
from .featurize import FeatureMatrix
from .surrogate import GpPosterior, predict

POLICIES = ("ei", "mean", "uncertainty", "random")

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class AcquisitionConfig:
    policy: str = "ei"
    xi: float = 0.05
    incumbent_quantile: float = 0.8
    shortlist_size: int = 50
    seed: int = 0
    random_replicates: int = 20
    include_noise_in_sigma: bool = False

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ValidationError(f"unknown policy {self.policy!r}")
        if self.shortlist_size < 1:
            raise ValidationError("shortlist_size must be >= 1")
        if not (0.0 < self.incumbent_quantile < 1.0):
            raise ValidationError("incumbent_quantile must lie in (0, 1)")

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


@dataclass(frozen=True)
class ScoredCandidate:
    molecule_id: str
    mu: float
    sigma: float
    ei: float
    rank: int
    feasible: bool = True

    def to_dict(self) -> dict:
        return {
            "molecule_id": self.molecule_id,
            "mu": self.mu,
            "sigma": self.sigma,
            "ei": self.ei,
            "rank": self.rank,
            "feasible": self.feasible,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "ScoredCandidate":
        return cls(
            molecule_id=payload["molecule_id"],
            mu=float(payload["mu"]),
            sigma=float(payload["sigma"]),
            ei=float(payload["ei"]),
            rank=int(payload["rank"]),
            feasible=bool(payload["feasible"]),
        )


def robust_incumbent(train_y: Sequence[float], q: float) -> float:
    """q-th quantile of the training targets with linear interpolation.

    Position p = q * (n - 1) on the sorted values; the result interpolates
    between the bracketing order statistics.
    """
    if len(train_y) == 0:
        raise ValidationError("cannot take a quantile of an empty list")
    ys = np.sort(np.asarray(train_y, dtype=float))
    p = q * (len(ys) - 1)
    lo = math.floor(p)
    hi = min(lo + 1, len(ys) - 1)
    frac = p - lo
    return float(ys[lo] + (ys[hi] - ys[lo]) * frac)


def norm_cdf(z):
    """Standard normal CDF (vectorized, <=1e-12 absolute error)."""
    return ndtr(z)


def norm_pdf(z):
    """Standard normal density (vectorized)."""
    z = np.asarray(z, dtype=float)
    with np.errstate(over="ignore"):  # z*z may overflow to inf; exp(-inf) = 0 is right
        return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def expected_improvement(mu: float, sigma: float, best: float, xi: float) -> float:
    """EI of one candidate against the xi-shifted incumbent; always >= 0."""
    if sigma < 0:
        raise ValidationError("sigma must be >= 0")
    imp = mu - best - xi
    if sigma == 0.0:
        return max(imp, 0.0)
    z = imp / sigma
    return max(float(imp * ndtr(z) + sigma * norm_pdf(z)), 0.0)


def ei_values(mu: np.ndarray, sigma: np.ndarray, best: float, xi: float) -> np.ndarray:
    """Vectorized expected_improvement over aligned mu/sigma arrays."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    imp = mu - best - xi
    out = np.maximum(imp, 0.0)
    pos = sigma > 0.0
    if np.any(pos):
        z = imp[pos] / sigma[pos]
        out[pos] = np.maximum(imp[pos] * ndtr(z) + sigma[pos] * norm_pdf(z), 0.0)
    return out


def score_pool(
    gp: GpPosterior,
    fm: FeatureMatrix,
    pool_ids: Sequence[str],
    cfg: AcquisitionConfig,
    feasibility: Mapping[str, bool] | None = None,
) -> list[ScoredCandidate]:
    """Score every pool candidate and rank by the configured policy.

    Ranking keys: ei desc, mu desc, sigma desc, or a seeded Fisher-Yates
    shuffle; ties always break by molecule_id ascending. Infeasible candidates
    keep their scores and ranks but are skipped by shortlist().
    """
    if not pool_ids:
        raise ValidationError("pool is empty")
    Xq = fm.rows(pool_ids)
    mu, sigma = predict(gp, Xq, include_noise=cfg.include_noise_in_sigma)
    best = robust_incumbent(gp.y, cfg.incumbent_quantile)
    ei = ei_values(mu, sigma, best, cfg.xi)
    feasibility = feasibility or {}

    entries = [
        (pool_ids[i], float(mu[i]), float(sigma[i]), float(ei[i]), bool(feasibility.get(pool_ids[i], True)))
        for i in range(len(pool_ids))
    ]
    if cfg.policy == "random":
        order = sorted(range(len(entries)), key=lambda i: entries[i][0])
        random.Random(cfg.seed).shuffle(order)
    else:
        key_index = {"ei": 3, "mean": 1, "uncertainty": 2}[cfg.policy]
        order = sorted(range(len(entries)), key=lambda i: (-entries[i][key_index], entries[i][0]))
    return [
        ScoredCandidate(
            molecule_id=entries[i][0],
            mu=entries[i][1],
            sigma=entries[i][2],
            ei=entries[i][3],
            rank=rank,
            feasible=entries[i][4],
        )
        for rank, i in enumerate(order, start=1)
    ]


def shortlist(scored: Sequence[ScoredCandidate], size: int) -> list[ScoredCandidate]:
    """First ``size`` feasible candidates in rank order (fewer if pool smaller)."""
    if not scored:
        raise ValidationError("cannot shortlist an empty scored pool")
    picked = [c for c in sorted(scored, key=lambda c: c.rank) if c.feasible]
    return picked[:size]


def write_shortlist_csv(candidates: Sequence[ScoredCandidate], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "molecule_id", "mu", "sigma", "ei", "feasible"])
        for c in candidates:
            writer.writerow([c.rank, c.molecule_id, repr(c.mu), repr(c.sigma), repr(c.ei), str(c.feasible).lower()])
