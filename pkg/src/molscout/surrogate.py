"""Gaussian-process regression with a constant-scaled Matern(3/2) kernel plus
learnable white noise, fitted by log-marginal-likelihood maximization.

k(r) = sf2 * (1 + sqrt(3) r / l) * exp(-sqrt(3) r / l), plus sn2 on the diagonal.

Hyperparameters are optimized in log space with L-BFGS-B using the analytic
gradient, from five starts: one fixed default and four log-uniform draws from a
seeded RNG. The Cholesky factorization is first attempted without jitter; on
failure the jitter escalates 1e-10 -> x10 up to 1e-4 before NumericalFailure.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .errors import NumericalFailureError, ValidationError

logger = logging.getLogger(__name__)

_SQRT3 = math.sqrt(3.0)
_LOG_2PI = math.log(2.0 * math.pi)

#: Log-space optimization box: (log sf2, log l, log sn2).
DEFAULT_BOUNDS = ((-9.2, 9.2), (-4.6, 6.9), (-18.4, 4.6))
DEFAULT_START = (0.0, 0.0, -4.6)

_JITTER_START = 1e-10
_JITTER_MAX = 1e-4
_JITTER_FACTOR = 10.0


@dataclass(frozen=True)
class KernelParams:
    signal_variance: float
    length_scale: float
    noise_variance: float

    def __post_init__(self) -> None:
        for name in ("signal_variance", "length_scale", "noise_variance"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValidationError(f"{name}={v!r} must be positive and finite")

    def log_vector(self) -> np.ndarray:
        return np.log([self.signal_variance, self.length_scale, self.noise_variance])

    @classmethod
    def from_log_vector(cls, theta: Sequence[float]) -> "KernelParams":
        sf2, ell, sn2 = np.exp(theta)
        return cls(signal_variance=float(sf2), length_scale=float(ell), noise_variance=float(sn2))

    def to_dict(self) -> dict:
        return {
            "signal_variance": self.signal_variance,
            "length_scale": self.length_scale,
            "noise_variance": self.noise_variance,
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "KernelParams":
        return cls(**{k: float(payload[k]) for k in ("signal_variance", "length_scale", "noise_variance")})


@dataclass(frozen=True)
class FitConfig:
    seed: int = 0
    n_restarts: int = 5
    bounds: tuple[tuple[float, float], ...] = DEFAULT_BOUNDS
    center_y: bool = False

    def __post_init__(self) -> None:
        if self.n_restarts < 1:
            raise ValidationError("n_restarts must be >= 1")


def kernel_eval(p: KernelParams, x1: Sequence[float], x2: Sequence[float], same_point: bool = False) -> float:
    """Matern(3/2) covariance between two points; adds noise iff same_point."""
    a = np.asarray(x1, dtype=float)
    b = np.asarray(x2, dtype=float)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    s = _SQRT3 * float(np.linalg.norm(a - b)) / p.length_scale
    value = p.signal_variance * (1.0 + s) * math.exp(-s)
    if same_point:
        value += p.noise_variance
    return value


def _matern_part(p: KernelParams, dist: np.ndarray) -> np.ndarray:
    s = (_SQRT3 / p.length_scale) * dist
    return p.signal_variance * (1.0 + s) * np.exp(-s)


def kernel_matrix(p: KernelParams, X1: np.ndarray, X2: np.ndarray | None = None, with_noise: bool = False) -> np.ndarray:
    """Covariance matrix between row sets; noise added on the diagonal when
    X2 is omitted (i.e. the Gram matrix of one set) and with_noise is set."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    if X2 is None:
        K = _matern_part(p, cdist(X1, X1))
        if with_noise:
            K = K + p.noise_variance * np.eye(X1.shape[0])
        return K
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape[1] != X2.shape[1]:
        raise ValidationError(f"dimension mismatch: {X1.shape[1]} vs {X2.shape[1]}")
    return _matern_part(p, cdist(X1, X2))


def _chol_with_jitter(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor with escalating diagonal jitter on failure."""
    try:
        return cholesky(K, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    except ValueError:
        pass
    jitter = _JITTER_START
    eye = np.eye(K.shape[0])
    while jitter <= _JITTER_MAX:
        try:
            return cholesky(K + jitter * eye, lower=True), jitter
        except (np.linalg.LinAlgError, ValueError):
            jitter *= _JITTER_FACTOR
    raise NumericalFailureError(f"Cholesky failed even with jitter {_JITTER_MAX}")


@dataclass(frozen=True)
class GpPosterior:
    """Fitted surrogate: hyperparameters, Cholesky factor, training targets."""

    params: KernelParams
    X: np.ndarray
    y: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    log_marginal_likelihood: float
    jitter: float = 0.0
    y_offset: float = 0.0

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def to_dict(self) -> dict:
        return {
            "format": 1,
            "params": self.params.to_dict(),
            "X": [[float(v) for v in row] for row in self.X],
            "y": [float(v) for v in self.y],
            "log_marginal_likelihood": float(self.log_marginal_likelihood),
            "y_offset": float(self.y_offset),
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "GpPosterior":
        params = KernelParams.from_dict(payload["params"])
        X = np.asarray(payload["X"], dtype=float)
        y = np.asarray(payload["y"], dtype=float)
        y_offset = float(payload.get("y_offset", 0.0))
        L, jitter = _chol_with_jitter(kernel_matrix(params, X, with_noise=True))
        alpha = cho_solve((L, True), y - y_offset)
        return cls(
            params=params,
            X=X,
            y=y,
            chol=L,
            alpha=alpha,
            log_marginal_likelihood=float(payload["log_marginal_likelihood"]),
            jitter=jitter,
            y_offset=y_offset,
        )


def log_marginal_likelihood(p: KernelParams, X: np.ndarray, y: np.ndarray) -> float:
    """LML = -1/2 y^T K^-1 y - 1/2 log|K| - n/2 log(2 pi), K with noise."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    L, _ = _chol_with_jitter(kernel_matrix(p, X, with_noise=True))
    alpha = cho_solve((L, True), y)
    return float(-0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * len(y) * _LOG_2PI)


def _lml_and_grad(theta: np.ndarray, dist: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    sf2, ell, sn2 = np.exp(theta)
    s = (_SQRT3 / ell) * dist
    expn = np.exp(-s)
    Kf = sf2 * (1.0 + s) * expn
    K = Kf + sn2 * np.eye(len(y))
    L, _ = _chol_with_jitter(K)
    alpha = cho_solve((L, True), y)
    lml = float(-0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * len(y) * _LOG_2PI)

    Kinv = cho_solve((L, True), np.eye(len(y)))
    W = np.outer(alpha, alpha) - Kinv
    dK_dlog_sf2 = Kf
    dK_dlog_ell = sf2 * s * s * expn
    grad = np.array(
        [
            0.5 * np.sum(W * dK_dlog_sf2),
            0.5 * np.sum(W * dK_dlog_ell),
            0.5 * sn2 * np.trace(W),
        ]
    )
    return lml, grad


def fit(X: np.ndarray, y: np.ndarray, cfg: FitConfig = FitConfig()) -> GpPosterior:
    """Maximize the LML over five restarts; deterministic under cfg.seed.

    The selected point always achieves an LML at least as high as every
    restart's initial point; ties go to the earliest restart index.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise ValidationError(f"X has {X.shape[0]} rows, y has {y.shape[0]}")
    if X.shape[0] < 2:
        raise ValidationError("need at least 2 training points")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValidationError("training data must be finite")

    y_offset = float(np.mean(y)) if cfg.center_y else 0.0
    yc = y - y_offset
    dist = cdist(X, X)
    bounds = np.asarray(cfg.bounds, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    starts = [np.asarray(DEFAULT_START, dtype=float)]
    for _ in range(cfg.n_restarts - 1):
        starts.append(rng.uniform(bounds[:, 0], bounds[:, 1]))

    def true_lml(theta: np.ndarray) -> float:
        try:
            lml, _ = _lml_and_grad(theta, dist, yc)
        except NumericalFailureError:
            return -math.inf
        return lml if math.isfinite(lml) else -math.inf

    def objective(theta: np.ndarray) -> tuple[float, np.ndarray]:
        # finite sentinel keeps L-BFGS-B moving through bad regions
        try:
            lml, grad = _lml_and_grad(theta, dist, yc)
        except NumericalFailureError:
            return 1e30, np.zeros(3)
        if not math.isfinite(lml) or not np.all(np.isfinite(grad)):
            return 1e30, np.zeros(3)
        return -lml, -grad

    best_theta: np.ndarray | None = None
    best_lml = -math.inf
    with np.errstate(over="ignore", invalid="ignore"):
        for start in starts:
            start = np.clip(start, bounds[:, 0], bounds[:, 1])
            candidates = [(true_lml(start), start)]
            try:
                res = minimize(objective, start, jac=True, method="L-BFGS-B", bounds=cfg.bounds)
                candidates.append((true_lml(res.x), res.x))
            except Exception as exc:  # optimizer blow-up counts as a failed restart
                logger.debug("restart failed: %s", exc)
            for lml, theta in candidates:
                if math.isfinite(lml) and lml > best_lml:
                    best_lml = lml
                    best_theta = np.array(theta)
    if best_theta is None or not math.isfinite(best_lml):
        raise NumericalFailureError("no restart produced a finite log marginal likelihood")

    params = KernelParams.from_log_vector(best_theta)
    L, jitter = _chol_with_jitter(kernel_matrix(params, X, with_noise=True))
    alpha = cho_solve((L, True), yc)
    lml = float(-0.5 * yc @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * len(yc) * _LOG_2PI)
    return GpPosterior(
        params=params, X=X, y=y, chol=L, alpha=alpha,
        log_marginal_likelihood=lml, jitter=jitter, y_offset=y_offset,
    )


def predict(gp: GpPosterior, Xq: np.ndarray, include_noise: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and std at query rows.

    sigma^2 = k(x,x) - k*^T K^-1 k*, plus the white-noise term iff
    include_noise; clamped at zero before the square root.
    """
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    if Xq.shape[1] != gp.X.shape[1]:
        raise ValidationError(f"query dimension {Xq.shape[1]} != training dimension {gp.X.shape[1]}")
    cross = kernel_matrix(gp.params, Xq, gp.X)
    mu = cross @ gp.alpha + gp.y_offset
    v = solve_triangular(gp.chol, cross.T, lower=True)
    var = gp.params.signal_variance - np.sum(v * v, axis=0)
    if include_noise:
        var = var + gp.params.noise_variance
    return mu, np.sqrt(np.clip(var, 0.0, None))
