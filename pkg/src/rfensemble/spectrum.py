"""Activation coefficients and the feature-covariance spectrum.

A random-features map u(x) = phi(F x / sqrt(d)) with F (p x d) Gaussian has
population covariance Omega = (kappa1^2/d) F F^T + kappa_star^2 I_p once the
nonlinearity is reduced to its Gaussian-equivalent coefficients

    kappa0 = E[phi(Z)],  kappa1 = E[Z phi(Z)],
    kappa_star^2 = E[phi(Z)^2] - kappa0^2 - kappa1^2.

The spectrum of Omega is a Marchenko-Pastur bulk of shape c = p/d, scale
kappa1^2, shifted by kappa_star^2, plus an atom of mass [1 - d/p]_+ at
kappa_star^2 when p > d (rank deficiency of F F^T). Both the closed form and
the measured spectrum of a sampled F are exposed behind one integral
interface.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainError, NumericalError, ResourceError
from .quadrature import QuadratureRule

MAX_MATRIX_ENTRIES = 50_000_000
DEFAULT_BULK_NODES = 2001


@dataclass(frozen=True)
class ActivationCoeffs:
    kappa0: float
    kappa1: float
    kappa_star: float

    def __post_init__(self):
        if self.kappa_star < 0:
            raise DomainError("kappa_star is stored as the nonnegative root")

    @property
    def kappa_star_sq(self) -> float:
        return self.kappa_star**2

    def scaled(self, c: float) -> "ActivationCoeffs":
        return ActivationCoeffs(c * self.kappa0, c * self.kappa1, abs(c) * self.kappa_star)


def activation_coeffs(activation: Callable[[np.ndarray], np.ndarray], rule: QuadratureRule) -> ActivationCoeffs:
    """Gaussian-equivalent coefficients of a scalar activation."""
    vals = np.asarray(activation(rule.nodes), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NumericalError("activation evaluated non-finite on quadrature nodes")
    k0 = float(rule.weights @ vals)
    k1 = float(rule.weights @ (rule.nodes * vals))
    second = float(rule.weights @ vals**2)
    resid = second - k0 * k0 - k1 * k1
    if resid < -1e-8:
        raise DomainError(f"E[phi^2] - kappa0^2 - kappa1^2 = {resid} < 0: inconsistent quadrature")
    return ActivationCoeffs(kappa0=k0, kappa1=k1, kappa_star=float(np.sqrt(max(resid, 0.0))))


@dataclass(frozen=True)
class SpectralModel:
    """Spectral density of the feature covariance, closed form or measured.

    kind "closed_form_mp": bulk is the shifted MP law parameterized by
    (aspect, scale, shift) = (d/p, kappa1, kappa_star^2); kind "empirical":
    `eigenvalues` holds the p atoms of mass 1/p.
    """

    kind: str
    aspect: float
    scale: float
    shift: float
    atom_mass: float = 0.0
    atom_location: float = 0.0
    eigenvalues: Optional[np.ndarray] = None
    bulk_nodes: int = DEFAULT_BULK_NODES

    def __post_init__(self):
        if self.kind not in ("closed_form_mp", "empirical"):
            raise ConfigError(f"unknown spectral model kind {self.kind!r}")
        if self.kind == "empirical":
            if self.eigenvalues is None or len(self.eigenvalues) == 0:
                raise ConfigError("empirical spectral model requires eigenvalues")
            if np.min(self.eigenvalues) < -1e-10:
                raise DomainError("feature covariance must be PSD: negative eigenvalue found")

    @property
    def support_min(self) -> float:
        if self.kind == "empirical":
            return float(np.min(self.eigenvalues))
        lo = self.shift + self.scale**2 * (1 - np.sqrt(1.0 / self.aspect)) ** 2
        return min(lo, self.atom_location) if self.atom_mass > 0 else lo

    @property
    def support_max(self) -> float:
        if self.kind == "empirical":
            return float(np.max(self.eigenvalues))
        return self.shift + self.scale**2 * (1 + np.sqrt(1.0 / self.aspect)) ** 2

    def total_mass(self) -> float:
        return spectral_integral(self, lambda s: np.ones_like(s))


def mp_spectral_model(alpha: float, gamma: float, coeffs: ActivationCoeffs, bulk_nodes: int = DEFAULT_BULK_NODES) -> SpectralModel:
    """Closed-form shifted Marchenko-Pastur model for Gaussian feature matrices.

    Stated for centered activations; a nonzero kappa0 adds a rank-one block
    the closed form does not carry.
    """
    if not (alpha > 0 and gamma > 0):
        raise ConfigError(f"alpha and gamma must be positive, got {alpha}, {gamma}")
    if abs(coeffs.kappa0) > 1e-10:
        raise ConfigError(
            "closed-form MP spectrum assumes kappa0 = 0; use empirical_spectral_model for non-centered activations"
        )
    return SpectralModel(
        kind="closed_form_mp",
        aspect=gamma,
        scale=coeffs.kappa1,
        shift=coeffs.kappa_star_sq,
        atom_mass=max(0.0, 1.0 - gamma),
        atom_location=coeffs.kappa_star_sq,
        bulk_nodes=bulk_nodes,
    )


def sample_feature_matrix(seed: int, p: int, d: int) -> np.ndarray:
    """The i.i.d. N(0,1) feature matrix shared by spectra, oracles and the ERM lab."""
    return np.random.default_rng(seed).standard_normal((p, d))


def _cache_dir() -> Path:
    root = os.environ.get("RFENSEMBLE_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "rfensemble"))
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def empirical_spectral_model(
    feature_matrix_seed: int,
    p: int,
    d: int,
    coeffs: ActivationCoeffs,
    cache: bool = True,
) -> SpectralModel:
    """Exact eigenvalues of (kappa1^2/d) F F^T + kappa_star^2 I_p as p atoms of mass 1/p.

    Eigendecompositions are cached on disk keyed by a content hash of
    (p, d, seed, kappa1, kappa_star) since they dominate oracle-test runtime.
    """
    if p < 1 or d < 1:
        raise ConfigError("p and d must be >= 1")
    if p * d > MAX_MATRIX_ENTRIES:
        raise ResourceError(f"p*d = {p * d} exceeds cap {MAX_MATRIX_ENTRIES}")
    meta = {
        "p": int(p),
        "d": int(d),
        "seed": int(feature_matrix_seed),
        "kappa1": float(coeffs.kappa1),
        "kappa_star": float(coeffs.kappa_star),
    }
    key = hashlib.sha256(json.dumps(meta, sort_keys=True).encode()).hexdigest()[:24]
    npy_path = _cache_dir() / f"spectrum_{key}.npy"
    json_path = _cache_dir() / f"spectrum_{key}.json"
    eigs = None
    if cache and npy_path.exists() and json_path.exists():
        try:
            if json.loads(json_path.read_text()) == meta:
                eigs = np.load(npy_path)
        except (ValueError, OSError):
            eigs = None
    if eigs is None:
        F = sample_feature_matrix(feature_matrix_seed, p, d)
        omega = (coeffs.kappa1**2 / d) * (F @ F.T)
        omega[np.diag_indices(p)] += coeffs.kappa_star_sq
        eigs = np.linalg.eigvalsh(omega)
        if cache:
            tmp = npy_path.with_suffix(".tmp.npy")
            np.save(tmp, eigs)
            os.replace(tmp, npy_path)
            json_path.write_text(json.dumps(meta, sort_keys=True))
    eigs = np.sort(np.maximum(eigs, 0.0))
    eigs.setflags(write=False)
    return SpectralModel(
        kind="empirical",
        aspect=d / p,
        scale=coeffs.kappa1,
        shift=coeffs.kappa_star_sq,
        eigenvalues=eigs,
    )


def _mp_bulk_grid(model: SpectralModel):
    """Midpoint grid under x = lo + (hi-lo) sin^2(t).

    The substitution absorbs the square-root vanishing of the MP density at
    both soft edges, so the transformed integrand is smooth and the midpoint
    rule converges spectrally.
    """
    c = 1.0 / model.aspect
    b2 = model.scale**2
    lo = b2 * (1 - np.sqrt(c)) ** 2
    hi = b2 * (1 + np.sqrt(c)) ** 2
    n = model.bulk_nodes
    t = (np.arange(n) + 0.5) * (np.pi / 2) / n
    x = lo + (hi - lo) * np.sin(t) ** 2
    dx = (hi - lo) * 2 * np.sin(t) * np.cos(t) * (np.pi / 2) / n
    density = np.sqrt(np.maximum((hi - x) * (x - lo), 0.0)) / (2 * np.pi * c * b2 * x)
    return x + model.shift, density * dx


def spectral_integral(model: SpectralModel, g: Callable[[np.ndarray], np.ndarray]) -> float:
    """Integral of g against the spectral density (bulk + atom)."""
    if model.kind == "empirical":
        vals = np.asarray(g(model.eigenvalues), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise NumericalError("spectral integrand non-finite on empirical support")
        return float(np.mean(vals))
    s, w = _mp_bulk_grid(model)
    vals = np.asarray(g(s), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NumericalError("spectral integrand non-finite on MP bulk support")
    out = float(vals @ w)
    if model.atom_mass > 0:
        atom_val = float(np.asarray(g(np.array([model.atom_location])), dtype=float)[0])
        if not np.isfinite(atom_val):
            raise NumericalError(f"spectral integrand non-finite at atom s={model.atom_location}")
        out += model.atom_mass * atom_val
    return out
