"""Teacher measure, loss proximals and the channel (hat-parameter) updates.

The channel step maps the order parameters (m, q0, q1, v) to their conjugates
(m_hat, q0_hat, q1_hat, v_hat). For the square loss with a linear teacher the
update is closed form; for logistic and hinge losses with a sign teacher it
is a Gaussian expectation of proximal quantities weighted by the teacher
measure

    Z0(y, w0, s0) = (1 + erf(y w0 / sqrt(2 s0))) / 2,

evaluated at w0 = m*omega/q0, s0 = rho - m^2/q0 for the single-learner
moments and at the pair-conditioned arguments m(omega+omega')/(q0+q1),
rho - 2 m^2/(q0+q1) for the cross moment.

Logistic integrands are smooth and use the Gauss-Hermite rules supplied by
the caller. Hinge integrands have kinks at the proximal branch boundaries;
those expectations use composite Gauss-Legendre panels split exactly at the
knots (Gauss-Hermite stalls near 1e-4 on kinked integrands regardless of
order).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigError, ConvergenceError, DomainError
from .quadrature import QuadratureSet, expect_2d_correlated

LOSSES = ("square", "logistic", "hinge")
TEACHERS = ("linear", "sign")

_COSH_CLIP = 350.0
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


@dataclass(frozen=True)
class ChannelSpec:
    """Loss/teacher pairing. Square pairs with the linear teacher, margin
    losses with the sign teacher; other pairings are rejected."""

    loss: str
    teacher: str

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}; expected one of {LOSSES}")
        if self.teacher not in TEACHERS:
            raise ConfigError(f"unknown teacher {self.teacher!r}; expected one of {TEACHERS}")
        if self.loss == "square" and self.teacher != "linear":
            raise ConfigError("square loss pairs with the linear teacher")
        if self.loss in ("logistic", "hinge") and self.teacher != "sign":
            raise ConfigError(f"{self.loss} loss pairs with the sign teacher")

    @property
    def label_space(self) -> str:
        return "real" if self.teacher == "linear" else "pm1"


@dataclass(frozen=True)
class OrderParams:
    m: float
    q0: float
    q1: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.m, self.q0, self.q1, self.v])

    def validate(self, rho: float) -> None:
        if not self.q0 > 0:
            raise DomainError(f"q0 must be positive, got {self.q0}")
        if abs(self.q1) > self.q0 * (1 + 1e-9):
            raise DomainError(f"|q1| = {abs(self.q1)} exceeds q0 = {self.q0}")
        if not self.v > 0:
            raise DomainError(f"v must be positive, got {self.v}")
        if self.m**2 > rho * self.q0 * (1 + 1e-9):
            raise DomainError(f"m^2 = {self.m**2} exceeds rho*q0 = {rho * self.q0}")


@dataclass(frozen=True)
class ConjugateParams:
    m_hat: float
    q0_hat: float
    q1_hat: float
    v_hat: float

    def as_array(self) -> np.ndarray:
        return np.array([self.m_hat, self.q0_hat, self.q1_hat, self.v_hat])


class ProxResult(NamedTuple):
    h: np.ndarray
    f: np.ndarray
    df_domega: np.ndarray


def teacher_z0(y: float, omega0, sigma0: float, teacher: str = "sign"):
    """Gaussian-smoothed label likelihood for the sign teacher.

    The linear teacher never goes through this function: continuous labels
    are integrated out analytically inside the ridge channel.
    """
    if teacher != "sign":
        raise DomainError("teacher_z0 is only defined for the sign teacher")
    if not sigma0 > 0:
        raise DomainError(f"sigma0 must be positive, got {sigma0}")
    if y not in (-1, 1):
        raise DomainError(f"sign-teacher labels are +/-1, got {y}")
    return 0.5 * (1.0 + erf(y * np.asarray(omega0) / np.sqrt(2.0 * sigma0)))


def teacher_dz0(y: float, omega0, sigma0: float):
    """Derivative of the sign-teacher measure in its mean argument."""
    if not sigma0 > 0:
        raise DomainError(f"sigma0 must be positive, got {sigma0}")
    if y not in (-1, 1):
        raise DomainError(f"sign-teacher labels are +/-1, got {y}")
    w = np.asarray(omega0)
    return y * np.exp(-(w**2) / (2.0 * sigma0)) / np.sqrt(2.0 * np.pi * sigma0)


def prox_square(y, omega, v: float):
    """argmin_x (x-omega)^2/(2v) + (y-x)^2/2 = (omega + v y)/(1 + v)."""
    if not v > 0:
        raise DomainError(f"v must be positive, got {v}")
    return (np.asarray(omega) + v * np.asarray(y)) / (1.0 + v)


def prox_logistic(y: float, omega, v: float, tol: float = 1e-12, max_iter: int = 300) -> ProxResult:
    """Proximal of the logistic loss at label y.

    Solves h = omega + y v / (1 + exp(y h)) by Newton safeguarded with
    bisection on the bracket [omega, omega + y v]; the residual is monotone
    increasing in h so the bracket always contains the unique root. The
    tolerance is scaled by the bracket magnitude, the best float64 can do
    when v or omega are large (small-ridge fixed points reach v ~ 1e3).
    """
    if not v > 0:
        raise DomainError(f"v must be positive, got {v}")
    omega = np.asarray(omega, dtype=float)
    lo = np.minimum(omega, omega + y * v)
    hi = np.maximum(omega, omega + y * v)
    tol_eff = tol * max(1.0, float(np.max(np.abs(lo))), float(np.max(np.abs(hi))))
    h = omega + y * v * _sigmoid(-y * omega)  # first fixed-point step, strictly inside the bracket
    dx_old = hi - lo
    converged = False
    for _ in range(max_iter):
        g = h - omega - y * v * _sigmoid(-y * h)
        if np.max(np.abs(g)) < tol_eff:
            converged = True
            break
        lo = np.where(g < 0, h, lo)
        hi = np.where(g < 0, hi, h)
        gp = 1.0 + v / (4.0 * np.cosh(np.clip(y * h / 2.0, -_COSH_CLIP, _COSH_CLIP)) ** 2)
        h_newton = h - g / gp
        # bisect whenever Newton would leave the bracket or beat less than a
        # halving (large v makes g nearly flat away from the origin, where
        # raw Newton ping-pongs between the bracket edges)
        slow = np.abs(2.0 * g) > np.abs(dx_old * gp)
        bisect = slow | (h_newton <= lo) | (h_newton >= hi)
        dx_old = np.where(bisect, 0.5 * (hi - lo), np.abs(g / gp))
        h = np.where(bisect, 0.5 * (lo + hi), h_newton)
    if not converged:
        raise ConvergenceError(f"logistic proximal did not reach {tol} in {max_iter} iterations")
    f = (h - omega) / v
    df = -1.0 / (v + 4.0 * np.cosh(np.clip(y * h / 2.0, -_COSH_CLIP, _COSH_CLIP)) ** 2)
    return ProxResult(h=h, f=f, df_domega=df)


def _sigmoid(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def prox_hinge(y: float, omega, v: float) -> ProxResult:
    """Proximal of the hinge loss at label y; ties on the branch boundaries
    are assigned to the middle branch so the map is deterministic."""
    if not v > 0:
        raise DomainError(f"v must be positive, got {v}")
    omega = np.asarray(omega, dtype=float)
    margin = omega * y
    middle = (margin >= 1.0 - v) & (margin <= 1.0)
    below = margin < 1.0 - v
    f = np.where(below, y, np.where(middle, (y - omega) / v, 0.0))
    df = np.where(middle, -1.0 / v, 0.0)
    h = omega + v * f
    return ProxResult(h=h, f=f, df_domega=df)


def _prox(loss: str, y: float, omega, v: float) -> ProxResult:
    if loss == "logistic":
        return prox_logistic(y, omega, v)
    if loss == "hinge":
        return prox_hinge(y, omega, v)
    raise ConfigError(f"no proximal dispatch for loss {loss!r}")


def hinge_knots(y: float, v: float) -> tuple[float, float]:
    """Branch boundaries of the hinge proximal in the omega variable."""
    a, b = (1.0 - v) / y, 1.0 / y
    return (a, b) if a < b else (b, a)


def _panel_nodes(a: float, b: float, max_width: float):
    """Composite Gauss-Legendre nodes/weights on [a, b]."""
    n_panels = max(1, int(np.ceil((b - a) / max_width)))
    edges = np.linspace(a, b, n_panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


def _kink_grid_1d(sd: float, knots: Iterable[float], span: float = 12.0):
    """Panel grid over [-span*sd, span*sd] split at the interior knots."""
    lo, hi = -span * sd, span * sd
    cuts = sorted({lo, hi, *[k for k in knots if lo < k < hi]})
    nodes, weights = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        n, w = _panel_nodes(a, b, max_width=0.5 * sd)
        nodes.append(n)
        weights.append(w)
    return np.concatenate(nodes), np.concatenate(weights)


def _expect_kinked_1d(g, q0: float, knots: Sequence[float]) -> float:
    sd = np.sqrt(q0)
    x, w = _kink_grid_1d(sd, knots)
    pdf = np.exp(-(x**2) / (2.0 * q0)) / np.sqrt(2.0 * np.pi * q0)
    return float(np.sum(w * pdf * g(x)))


def _expect_kinked_2d(g, q0: float, q1: float, knots: Sequence[float]) -> float:
    """E[g(W,W')] over the correlated pair, panels split at knots per axis."""
    if abs(q1) >= q0 * (1 - 1e-12):
        sign = 1.0 if q1 > 0 else -1.0
        return _expect_kinked_1d(lambda x: g(x, sign * x), q0, knots)
    sd = np.sqrt(q0)
    x, wx = _kink_grid_1d(sd, knots)
    det = q0 * q0 - q1 * q1
    xs = x[:, None]
    ys = x[None, :]
    pdf = np.exp(-(q0 * xs**2 - 2.0 * q1 * xs * ys + q0 * ys**2) / (2.0 * det)) / (2.0 * np.pi * np.sqrt(det))
    vals = g(xs + np.zeros_like(ys), ys + np.zeros_like(xs))
    return float(np.einsum("i,j,ij->", wx, wx, pdf * vals))


def _teacher_variances(params: OrderParams, rho: float) -> tuple[float, float]:
    s0 = rho - params.m**2 / params.q0
    s_pair = rho - 2.0 * params.m**2 / (params.q0 + params.q1)
    if s0 <= 0 or s_pair <= 0:
        raise DomainError(
            f"teacher conditional variance nonpositive (s0={s0}, s_pair={s_pair}); m too large for (rho, q0, q1)"
        )
    return s0, s_pair


def channel_update(
    params: OrderParams,
    rho: float,
    alpha: float,
    gamma: float,
    spec: ChannelSpec,
    rules: QuadratureSet | None = None,
) -> ConjugateParams:
    """One channel step: order parameters to conjugate parameters."""
    if alpha < 0:
        raise DomainError(f"alpha must be nonnegative, got {alpha}")
    if not gamma > 0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    if spec.loss == "square":
        # globally well-defined closed form: degenerate q0 = 0 inputs allowed
        return _channel_square(params, rho, alpha, gamma)
    if alpha == 0.0:
        return ConjugateParams(0.0, 0.0, 0.0, 0.0)
    params.validate(rho)
    rules = rules or QuadratureSet()
    m, q0, q1, v = params.m, params.q0, params.q1, params.v
    s0, s_pair = _teacher_variances(params, rho)

    # Both labels contribute equally: the margin losses obey
    # f(-1, w) = -f(+1, -w), the grids are symmetric about 0, and the sign
    # teacher flips with its mean argument, so the y-sum is twice the y=+1
    # term node for node.
    if spec.loss == "logistic":
        w = np.sqrt(q0) * rules.rule_1d.nodes
        wt = rules.rule_1d.weights
    else:
        w, wt_raw = _kink_grid_1d(np.sqrt(q0), hinge_knots(1.0, v))
        wt = wt_raw * np.exp(-(w**2) / (2.0 * q0)) / np.sqrt(2.0 * np.pi * q0)
    pr = _prox(spec.loss, 1.0, w, v)
    z0 = teacher_z0(1.0, m * w / q0, s0)
    dz0 = teacher_dz0(1.0, m * w / q0, s0)
    vh = -2.0 * alpha * float(wt @ (z0 * pr.df_domega))
    q0h = 2.0 * alpha * float(wt @ (z0 * pr.f**2))
    mh = 2.0 * (alpha / np.sqrt(gamma)) * float(wt @ (dz0 * pr.f))

    def pair_integrand(wa, wb):
        fa = _prox(spec.loss, 1.0, wa, v).f
        fb = _prox(spec.loss, 1.0, wb, v).f
        return teacher_z0(1.0, m * (wa + wb) / (q0 + q1), s_pair) * fa * fb

    if spec.loss == "logistic":
        if q1 >= q0 * (1 - 1e-12):
            # perfectly correlated pair: same integrand as q0_hat, and it must
            # ride the same nodes or a spurious q0_hat - q1_hat gap at the
            # quadrature-difference level stalls the kernel-limit solver
            q1h = 2.0 * alpha * float(wt @ pair_integrand(w, w))
        else:
            q1h = 2.0 * alpha * expect_2d_correlated(pair_integrand, q0, q1, rules.rule_2d)
    else:
        q1h = 2.0 * alpha * _expect_kinked_2d(pair_integrand, q0, q1, hinge_knots(1.0, v))
    return ConjugateParams(m_hat=mh, q0_hat=q0h, q1_hat=q1h, v_hat=vh)


def _channel_square(params: OrderParams, rho: float, alpha: float, gamma: float) -> ConjugateParams:
    m, q0, q1, v = params.m, params.q0, params.q1, params.v
    one_plus_v = 1.0 + v
    return ConjugateParams(
        m_hat=alpha / np.sqrt(gamma) / one_plus_v,
        q0_hat=alpha * (rho - 2.0 * m + q0) / one_plus_v**2,
        q1_hat=alpha * (rho - 2.0 * m + q1) / one_plus_v**2,
        v_hat=alpha / one_plus_v,
    )


# ---------------------------------------------------------------------------
# Hinge closed form
# ---------------------------------------------------------------------------


def _trunc_moments(mu: float, var: float, a: np.ndarray, b: np.ndarray):
    """(M0, M1, M2): integrals of 1, u, u^2 against N(mu, var) over [a, b]."""
    sd = np.sqrt(var)
    za, zb = (a - mu) / sd, (b - mu) / sd
    cdf = lambda z: 0.5 * (1.0 + erf(z / np.sqrt(2.0)))
    pdf = lambda z: np.exp(-0.5 * z**2) / np.sqrt(2.0 * np.pi)
    m0 = cdf(zb) - cdf(za)
    i1 = pdf(za) - pdf(zb)
    i2 = m0 + za * pdf(za) - zb * pdf(zb)
    m1 = mu * m0 + sd * i1
    m2 = mu**2 * m0 + 2.0 * mu * sd * i1 + var * i2
    return m0, m1, m2


def _hinge_pair_inner(s: np.ndarray, q0: float, q1: float, v: float) -> np.ndarray:
    """E[f(W) f(s-W)] with W | W+W'=s ~ N(s/2, (q0-q1)/2), y=+1 branches.

    The product of the two piecewise-linear factors is quadratic between the
    breakpoints {s-1, s-1+v, 1-v, 1}, so each cell reduces to truncated
    Gaussian moments.
    """
    s = np.asarray(s, dtype=float)
    var = 0.5 * (q0 - q1)
    if var < 1e-14 * q0:
        half = 0.5 * s
        fa = prox_hinge(1.0, half, v).f
        return fa * fa
    out = np.zeros_like(s)
    for sv in np.ndindex(s.shape):
        si = s[sv]
        lo_all, hi_all = si - 1.0, 1.0
        if hi_all <= lo_all:
            continue
        cuts = np.array(sorted({si - 1.0, si - 1.0 + v, 1.0 - v, 1.0}))
        edges = np.unique(np.clip(np.concatenate(([lo_all], cuts, [hi_all])), lo_all, hi_all))
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            if b - a <= 0:
                continue
            mid = 0.5 * (a + b)
            # factor f(+1) at omega=mid: constants or (1-omega)/v
            if mid < 1.0 - v:
                c_f = (1.0, 0.0)
            elif mid <= 1.0:
                c_f = (1.0 / v, -1.0 / v)
            else:
                continue
            # factor f(+1) at omega' = s - omega
            if mid > si - 1.0 + v:
                c_g = (1.0, 0.0)
            elif mid >= si - 1.0:
                c_g = ((1.0 - si) / v, 1.0 / v)
            else:
                continue
            c0 = c_f[0] * c_g[0]
            c1 = c_f[0] * c_g[1] + c_f[1] * c_g[0]
            c2 = c_f[1] * c_g[1]
            m0, m1, m2 = _trunc_moments(0.5 * si, var, np.array(a), np.array(b))
            total += c0 * m0 + c1 * m1 + c2 * m2
        out[sv] = total
    return out


def channel_update_hinge_closed_form(params: OrderParams, rho: float, alpha: float) -> ConjugateParams:
    """Hinge channel via erf/Gaussian reductions and 1D quadrature only.

    Both labels contribute equally by the omega -> -omega symmetry, so every
    expression below is twice the y=+1 term.
    """
    params.validate(rho)
    if alpha < 0:
        raise DomainError(f"alpha must be nonnegative, got {alpha}")
    if alpha == 0.0:
        return ConjugateParams(0.0, 0.0, 0.0, 0.0)
    m, q0, q1, v = params.m, params.q0, params.q1, params.v
    s0, s_pair = _teacher_variances(params, rho)
    sd = np.sqrt(q0)
    c = m / (q0 * np.sqrt(2.0 * s0))

    def gauss_erf(a: float, b: float, poly):
        """integral over [a,b] of N(w;0,q0) (1+erf(c w)) poly(w) dw."""
        x, w = _panel_nodes(a, b, max_width=0.5 * sd)
        pdf = np.exp(-(x**2) / (2.0 * q0)) / np.sqrt(2.0 * np.pi * q0)
        return float(np.sum(w * pdf * (1.0 + erf(c * x)) * poly(x)))

    v_hat = (alpha / v) * gauss_erf(1.0 - v, 1.0, lambda w: np.ones_like(w))
    q0_hat = alpha * (
        gauss_erf(-12.0 * sd, 1.0 - v, lambda w: np.ones_like(w))
        + gauss_erf(1.0 - v, 1.0, lambda w: ((1.0 - w) / v) ** 2)
    )

    # m_hat: the teacher-density weight folds into a single Gaussian of
    # variance q0*s0/rho, leaving elementary truncated moments.
    tau2 = q0 * s0 / rho
    tau = np.sqrt(tau2)
    below = 0.5 * (1.0 + erf((1.0 - v) / (tau * np.sqrt(2.0))))
    m0, m1, _ = _trunc_moments(0.0, tau2, np.array(1.0 - v), np.array(1.0))
    m_hat = (2.0 * alpha) * (below + (m0 - m1) / v) / np.sqrt(2.0 * np.pi * rho)

    # q1_hat: outer integral over s = W + W', inner integral analytic.
    var_s = 2.0 * (q0 + q1)
    sd_s = np.sqrt(var_s)
    lo, hi = -12.0 * sd_s, 2.0
    cuts = sorted({lo, hi, *[k for k in (2.0 - 2.0 * v, 2.0 - v) if lo < k < hi]})
    nodes, weights = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        n_, w_ = _panel_nodes(a, b, max_width=0.5 * sd_s)
        nodes.append(n_)
        weights.append(w_)
    s_nodes = np.concatenate(nodes)
    s_weights = np.concatenate(weights)
    pdf_s = np.exp(-(s_nodes**2) / (2.0 * var_s)) / np.sqrt(2.0 * np.pi * var_s)
    z_factor = 0.5 * (1.0 + erf(m * s_nodes / ((q0 + q1) * np.sqrt(2.0 * s_pair))))
    inner = _hinge_pair_inner(s_nodes, q0, q1, v)
    q1_hat = 2.0 * alpha * float(np.sum(s_weights * pdf_s * z_factor * inner))
    return ConjugateParams(m_hat=m_hat, q0_hat=q0_hat, q1_hat=q1_hat, v_hat=v_hat)


def training_loss(
    params: OrderParams,
    conj: ConjugateParams,
    rho: float,
    spec: ChannelSpec,
    rules: QuadratureSet | None = None,
) -> float:
    """Asymptotic per-sample training loss of a single learner at a fixed point."""
    del conj  # part of the fixed-point state signature; the separable forms need only (params, rho)
    m, q0, v = params.m, params.q0, params.v
    if spec.loss == "square":
        return (rho - 2.0 * m + q0) / (2.0 * (1.0 + v) ** 2)
    params.validate(rho)
    rules = rules or QuadratureSet()
    s0, _ = _teacher_variances(params, rho)

    def loss_val(y, h):
        if spec.loss == "logistic":
            return np.logaddexp(0.0, -y * h)
        return np.maximum(0.0, 1.0 - y * h)

    total = 0.0
    for y in (1.0, -1.0):

        def integrand(w, y=y):
            h = _prox(spec.loss, y, w, v).h
            return teacher_z0(y, m * w / q0, s0) * loss_val(y, h)

        if spec.loss == "logistic":
            w = np.sqrt(q0) * rules.rule_1d.nodes
            total += float(rules.rule_1d.weights @ integrand(w))
        else:
            total += _expect_kinked_1d(integrand, q0, hinge_knots(y, v))
    return total
