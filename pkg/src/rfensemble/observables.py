"""Everything derived from a solved fixed point.

The limiting joint law of (teacher field, K learner fields) is Gaussian with
covariance assembled from (rho, m, q0, q1). Closed forms cover the mean
estimator under squared error and the score-average sign estimator under
zero-one error; everything else (majority vote in particular) goes through
Monte Carlo over the limiting Gaussian, with a counter-based RNG so results
are reproducible and shard-invariant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, Union

import numpy as np
from scipy.special import ndtri

from .channels import OrderParams
from .errors import ConfigError, DomainError

Estimator = Union[str, Callable[[np.ndarray], np.ndarray]]

_PSD_TOL = 1e-9


@dataclass(frozen=True)
class EnsembleCovariance:
    """Covariance of (teacher field nu, learner fields mu_1..mu_K).

    Var(nu) = rho, Cov(nu, mu_k) = m, Cov(mu) = (q0 - q1) I + q1 ones.
    """

    rho: float
    m: float
    q0: float
    q1: float
    K: int

    def __post_init__(self):
        if not self.rho > 0:
            raise DomainError(f"rho must be positive, got {self.rho}")
        if self.K < 1:
            raise ConfigError("K must be >= 1")

    @classmethod
    def from_params(cls, params: OrderParams, rho: float, K: int) -> "EnsembleCovariance":
        return cls(rho=rho, m=params.m, q0=params.q0, q1=params.q1, K=K)

    def matrix(self) -> np.ndarray:
        sigma = np.empty((self.K + 1, self.K + 1))
        sigma[0, 0] = self.rho
        sigma[0, 1:] = sigma[1:, 0] = self.m
        sigma[1:, 1:] = (self.q0 - self.q1) * np.eye(self.K) + self.q1
        return sigma

    def psd_margins(self) -> tuple[float, float, float]:
        """(q0 - q1, q0 + (K-1) q1, q0 + (K-1) q1 - K m^2 / rho): all must be >= 0."""
        row = self.q0 + (self.K - 1) * self.q1
        return self.q0 - self.q1, row, row - self.K * self.m**2 / self.rho

    def check_psd(self) -> None:
        margins = self.psd_margins()
        scale = max(self.q0, 1.0)
        if min(margins) < -_PSD_TOL * scale:
            raise DomainError(f"covariance not PSD: margins (q0-q1, q0+(K-1)q1, schur) = {margins}")


def mse_test_error(cov: EnsembleCovariance) -> tuple[float, float, float]:
    """(eps_g, eps_bar, delta_eps) for the mean estimator under squared error."""
    eps_bar = cov.rho + cov.q1 - 2.0 * cov.m
    delta = (cov.q0 - cov.q1) / cov.K
    return eps_bar + delta, eps_bar, delta


def _acos_clipped(x: float) -> float:
    if abs(x) > 1.0 + 1e-12:
        raise DomainError(f"arccos argument {x} outside [-1, 1]")
    return math.acos(min(1.0, max(-1.0, x)))


def classification_error_avg(cov: EnsembleCovariance) -> float:
    """Zero-one error of sign(sum_k mu_k) against the sign teacher."""
    arg = math.sqrt(cov.K) * cov.m / math.sqrt(cov.rho * (cov.q0 - cov.q1 + cov.K * cov.q1))
    return _acos_clipped(arg) / math.pi


def classification_error_bar(rho: float, m: float, q1: float) -> float:
    """Ensemble-limit zero-one error (the K -> infinity form)."""
    return _acos_clipped(m / math.sqrt(rho * q1)) / math.pi


def disagreement_probability(q0: float, q1: float) -> float:
    """Probability two learners output opposite labels: arccos(q1/q0)/pi."""
    if not q0 > 0:
        raise DomainError(f"q0 must be positive, got {q0}")
    if abs(q1) > q0 * (1 + 1e-12):
        raise DomainError(f"|q1| = {abs(q1)} exceeds q0 = {q0}")
    return _acos_clipped(q1 / q0) / math.pi


def error_decomposition_classification(
    points: Iterable[OrderParams], rho: float
) -> list[tuple[float, float]]:
    """(eps_bar, delta_eps) along a sweep of single-learner fixed points."""
    out = []
    for params in points:
        eps_bar = classification_error_bar(rho, params.m, params.q1)
        eps_k1 = _acos_clipped(params.m / math.sqrt(rho * params.q0)) / math.pi
        out.append((eps_bar, eps_k1 - eps_bar))
    return out


# ---------------------------------------------------------------------------
# Monte Carlo over the limiting Gaussian
# ---------------------------------------------------------------------------


MC_BLOCK = 1 << 16


def _sample_block(cov: EnsembleCovariance, block: int, count: int, seed: int):
    """Draw the first `count` samples of fixed-size block `block`.

    Each block owns an independent stream keyed by (seed, block index) and a
    sample consumes exactly K+1 inverse-CDF normals, so the draws depend only
    on (seed, block, position): reproducible and shard-invariant.
    """
    K = cov.K
    width = K + 1
    u = np.random.Generator(np.random.Philox(key=(seed, block))).random((count, width))
    z = ndtri(np.clip(u, 1e-16, 1.0 - 1e-16))
    z0 = z[:, 0]
    xi = z[:, 1:]
    nu = math.sqrt(cov.rho) * z0
    q0t = cov.q0 - cov.m**2 / cov.rho
    q1t = cov.q1 - cov.m**2 / cov.rho
    diag = math.sqrt(max(cov.q0 - cov.q1, 0.0))
    row = max(q0t + (K - 1) * q1t, 0.0)
    coupling = (math.sqrt(row) - diag) / K
    mu = (cov.m / math.sqrt(cov.rho)) * z0[:, None] + diag * xi + coupling * xi.sum(axis=1, keepdims=True)
    return nu, mu


def _sign_pm1(x: np.ndarray) -> np.ndarray:
    return np.where(x >= 0, 1.0, -1.0)


def _resolve_estimator(estimator: Estimator):
    if callable(estimator):
        return estimator, None
    if estimator == "mean":
        return (lambda mu: mu.mean(axis=1)), "linear"
    if estimator == "avg_sign":
        return (lambda mu: _sign_pm1(mu.sum(axis=1))), "sign"
    if estimator == "majority":
        return (lambda mu: _sign_pm1(_sign_pm1(mu).sum(axis=1))), "sign"
    raise ConfigError(f"unknown estimator {estimator!r}")


def generic_gen_error(
    cov: EnsembleCovariance,
    estimator: Estimator,
    metric: str,
    samples: int,
    seed: int,
    teacher: str | None = None,
) -> tuple[float, float]:
    """Monte Carlo test error for any estimator/error measure pair.

    Returns (estimate, std_error). Deterministic for a fixed seed and
    invariant to how blocks are distributed across workers.
    """
    if samples < 10_000:
        raise ConfigError("use at least 1e4 samples; below that the MC band is not meaningful")
    cov.check_psd()
    f_hat, default_teacher = _resolve_estimator(estimator)
    teacher = teacher or default_teacher
    if teacher not in ("linear", "sign"):
        raise ConfigError(f"unknown teacher {teacher!r}")
    if metric not in ("mse", "zero_one"):
        raise ConfigError(f"unknown metric {metric!r}")
    total = 0.0
    total_sq = 0.0
    done = 0
    block = 0
    while done < samples:
        count = min(MC_BLOCK, samples - done)
        nu, mu = _sample_block(cov, block, count, seed)
        block += 1
        y = nu if teacher == "linear" else _sign_pm1(nu)
        y_hat = np.asarray(f_hat(mu), dtype=float)
        delta = (y - y_hat) ** 2 if metric == "mse" else (y != y_hat).astype(float)
        total += float(delta.sum())
        total_sq += float((delta**2).sum())
        done += count
    mean = total / samples
    var = max(total_sq / samples - mean**2, 0.0)
    return mean, math.sqrt(var / samples)


def majority_vote_error(cov: EnsembleCovariance, K: int, samples: int, seed: int) -> tuple[float, float]:
    """Zero-one error of the majority rule sign(sum_k sign(mu_k)); K odd."""
    if K != cov.K:
        raise ConfigError(f"K={K} does not match the covariance (K={cov.K})")
    if K % 2 == 0:
        raise ConfigError("majority vote needs odd K (even K leaves ties)")
    return generic_gen_error(cov, "majority", "zero_one", samples, seed)


def confidence_density(q0: float, q1: float, grid: Sequence[float]) -> np.ndarray:
    """Joint density of the two learners' logistic confidence scores.

    Pushforward of (mu_1, mu_2) ~ N(0, [[q0,q1],[q1,q0]]) through the
    logistic map: density(p1, p2) = N2(logit p1, logit p2) / prod p_i(1-p_i).
    """
    if not q0 > 0:
        raise DomainError(f"q0 must be positive, got {q0}")
    if abs(q1) >= q0 * (1 - 1e-12):
        raise DomainError("confidence density needs |q1| < q0; the degenerate case is a diagonal line mass")
    phi = np.asarray(grid, dtype=float)
    if np.any(phi <= 0) or np.any(phi >= 1):
        raise DomainError("grid points must lie strictly inside (0, 1)")
    x = np.log(phi / (1.0 - phi))
    det = q0 * q0 - q1 * q1
    xs = x[:, None]
    ys = x[None, :]
    quad = (q0 * xs**2 - 2.0 * q1 * xs * ys + q0 * ys**2) / (2.0 * det)
    normal = np.exp(-quad) / (2.0 * np.pi * np.sqrt(det))
    jac = (phi * (1.0 - phi))[:, None] * (phi * (1.0 - phi))[None, :]
    return normal / jac
