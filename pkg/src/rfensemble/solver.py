"""Damped fixed-point iteration alternating channel and prior updates."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .channels import ChannelSpec, ConjugateParams, OrderParams, channel_update
from .errors import ConfigError, DomainError
from .priors import kernel_channel_update, kernel_prior_update, prior_update_spectral
from .quadrature import QuadratureSet
from .spectrum import ActivationCoeffs, SpectralModel

DIVERGENCE_Q0 = 1e12

DEFAULT_INIT = OrderParams(m=0.01, q0=1.0, q1=0.5, v=1.0)


@dataclass(frozen=True)
class ModelConfig:
    """Problem definition for one fixed-point solve."""

    alpha: float
    gamma: float
    rho: float
    lam: float
    K: int
    spec: ChannelSpec
    spectrum: SpectralModel
    coeffs: ActivationCoeffs

    def __post_init__(self):
        if not (self.alpha > 0 and self.gamma > 0 and self.rho > 0):
            raise ConfigError("alpha, gamma and rho must be positive")
        if not self.lam > 0:
            raise ConfigError(
                "lam must be positive; the ridgeless limit is approached with a small lam (1e-6 ridge, 1e-4 classification)"
            )
        if self.K < 1:
            raise ConfigError("K must be >= 1")


@dataclass(frozen=True)
class SolveOptions:
    damping: float = 0.5
    tol: float = 1e-9
    max_iters: int = 5000
    init: OrderParams = DEFAULT_INIT
    order_1d: int = 101
    order_2d: int = 61
    verbose: bool = False

    def __post_init__(self):
        if not (0 < self.damping <= 1):
            raise ConfigError("damping must lie in (0, 1]")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")

    def rules(self) -> QuadratureSet:
        return QuadratureSet.with_orders(self.order_1d, self.order_2d)


@dataclass(frozen=True)
class FixedPoint:
    params: OrderParams
    conj: ConjugateParams
    iterations: int
    residual: float
    converged: bool
    status: str = "converged"  # converged | max_iters | interpolation_divergence
    projections: int = 0

    def as_dict(self) -> dict:
        return {
            "m": self.params.m,
            "q0": self.params.q0,
            "q1": self.params.q1,
            "v": self.params.v,
            "m_hat": self.conj.m_hat,
            "q0_hat": self.conj.q0_hat,
            "q1_hat": self.conj.q1_hat,
            "v_hat": self.conj.v_hat,
            "iterations": self.iterations,
            "residual": self.residual,
            "converged": self.converged,
            "status": self.status,
            "projections": self.projections,
        }


def _project(params: OrderParams, rho: float) -> tuple[OrderParams, bool]:
    """Pull an iterate back into the admissible set; reports if it moved."""
    m, q0, q1, v = params.m, params.q0, params.q1, params.v
    moved = False
    if not np.isfinite(q0) or q0 > DIVERGENCE_Q0:
        return params, False  # divergence handled by the caller
    if q0 <= 0:
        q0, moved = 1e-12, True
    if v <= 0:
        v, moved = 1e-12, True
    if abs(q1) > q0:
        q1, moved = np.sign(q1) * q0, True
    cap = np.sqrt(rho * q0)
    if abs(m) > cap:
        m, moved = np.sign(m) * cap * (1 - 1e-12), True
    return OrderParams(m=m, q0=q0, q1=q1, v=v), moved


def _iterate(step, init: OrderParams, rho: float, opts: SolveOptions) -> FixedPoint:
    """Generic damped iteration; `step` maps OrderParams -> (OrderParams, ConjugateParams)."""
    params = init
    damping = opts.damping
    projections = 0
    residual = np.inf
    prev_delta: Optional[np.ndarray] = None
    osc_count = 0
    conj = ConjugateParams(0.0, 0.0, 0.0, 0.0)
    for it in range(1, opts.max_iters + 1):
        update, conj = step(params)
        new_arr = update.as_array()
        cur_arr = params.as_array()
        if not np.all(np.isfinite(new_arr)) or update.q0 > DIVERGENCE_Q0:
            return FixedPoint(params, conj, it, residual, False, "interpolation_divergence", projections)
        delta = new_arr - cur_arr
        residual = float(np.max(np.abs(delta)))
        if residual < opts.tol:
            return FixedPoint(update, conj, it, residual, True, "converged", projections)
        if prev_delta is not None:
            if np.all(np.sign(delta[[1, 3]]) == -np.sign(prev_delta[[1, 3]])) and np.any(delta[[1, 3]] != 0):
                osc_count += 1
                if osc_count >= 3 and damping > 0.1:
                    damping = 0.1
            else:
                osc_count = 0
        prev_delta = delta
        mixed = OrderParams(*(damping * new_arr + (1 - damping) * cur_arr))
        mixed, moved = _project(mixed, rho)
        projections += int(moved)
        params = mixed
        if opts.verbose and it % 100 == 0:
            print(f"iter {it}: residual {residual:.3e} damping {damping}")
    return FixedPoint(params, conj, opts.max_iters, residual, False, "max_iters", projections)


def solve_fixed_point(config: ModelConfig, opts: SolveOptions | None = None) -> FixedPoint:
    """Solve the self-consistent equations for a finite-size-ratio model."""
    opts = opts or SolveOptions()
    rules = opts.rules()

    def step(params: OrderParams):
        conj = channel_update(params, config.rho, config.alpha, config.gamma, config.spec, rules)
        update = prior_update_spectral(conj, config.lam, config.gamma, config.spectrum, config.coeffs)
        return update, conj

    init, _ = _project(opts.init, config.rho)
    return _iterate(step, init, config.rho, opts)


def solve_kernel_limit(
    delta: float,
    rho: float,
    lam: float,
    spec: ChannelSpec,
    coeffs: ActivationCoeffs,
    opts: SolveOptions | None = None,
) -> FixedPoint:
    """Fixed point of the kernel-limit equations at fixed delta = n/d."""
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    if not lam > 0:
        raise ConfigError("kernel mode requires lam > 0")
    opts = opts or SolveOptions()
    rules = opts.rules()

    def step(params: OrderParams):
        conj = kernel_channel_update(params, rho, delta, spec, rules)
        update = kernel_prior_update(conj, lam, delta, coeffs)
        return update, conj

    init, _ = _project(opts.init, rho)
    return _iterate(step, init, rho, opts)


def warm_options(opts: SolveOptions, fp: FixedPoint) -> SolveOptions:
    """Options seeded at a previously converged fixed point (sweep warm starts)."""
    if not fp.converged:
        return opts
    return replace(opts, init=fp.params)
