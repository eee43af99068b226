"""Finite-size empirical-risk-minimization experiments.

Validates the asymptotic theory at desk scale: draw a synthetic dataset,
train K learners on their own random-feature maps, measure the overlap
statistics and errors, and compare against the solved fixed point.

Scaling conventions are pinned here once and shared by every trainer and
estimator: pre-activations are w.u/sqrt(p), the teacher field is
theta.x/sqrt(d), and the trained objective is

    sum_mu loss(y_mu, w.u_mu/sqrt(p)) + lam/2 |w|^2,

i.e. the same lam the fixed-point equations use. (The per-sample-averaged
objective with an order-one lam has no nontrivial proportional limit.)
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

from .channels import ChannelSpec
from .errors import ConfigError, ConvergenceError, DomainError, NumericalError
from .priors import FeatureEnsemble, sample_feature_ensemble
from .spectrum import ActivationCoeffs

DEFAULT_TEST_SAMPLES = 10_000


def derive_seed(*parts) -> tuple:
    """Flatten seed components into a SeedSequence-compatible tuple of ints.

    String tags (stream labels like "features") hash to stable 32-bit ints so
    distinct streams of one trial never collide.
    """
    out = []
    for part in parts:
        if isinstance(part, (tuple, list)):
            out.extend(derive_seed(*part))
        elif isinstance(part, str):
            digest = hashlib.sha256(part.encode()).digest()
            out.append(int.from_bytes(digest[:4], "little"))
        elif isinstance(part, (int, np.integer)):
            out.append(int(part) & 0xFFFFFFFF)
        else:
            raise ConfigError(f"seed components must be ints, strings or tuples, got {type(part)}")
    return tuple(out)


def preactivation(features: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Score u -> w.u/sqrt(p); the single place the sqrt(p) lives."""
    return features @ w / math.sqrt(features.shape[1])


def teacher_field(X: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """theta.x/sqrt(d); the single place the sqrt(d) lives."""
    return X @ theta / math.sqrt(X.shape[1])


@dataclass(frozen=True)
class SyntheticDataset:
    X: np.ndarray
    theta: np.ndarray
    y: np.ndarray
    teacher: str
    seed: object

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


def apply_teacher(z: np.ndarray, teacher: str) -> np.ndarray:
    if teacher == "linear":
        return z
    if teacher == "sign":
        return np.where(z >= 0, 1.0, -1.0)
    raise ConfigError(f"unknown teacher {teacher!r}")


def generate_dataset(n: int, d: int, rho: float, teacher: str, seed) -> SyntheticDataset:
    """i.i.d. Gaussian inputs with labels from a Gaussian linear teacher."""
    if n < 1 or d < 1:
        raise ConfigError("n and d must be >= 1")
    if not rho > 0:
        raise ConfigError("rho must be positive")
    rng = np.random.default_rng(seed)
    theta = rng.normal(0.0, math.sqrt(rho), size=d)
    X = rng.standard_normal((n, d))
    y = apply_teacher(teacher_field(X, theta), teacher)
    return SyntheticDataset(X=X, theta=theta, y=y, teacher=teacher, seed=seed)


def featurize(
    dataset_or_X,
    ensemble: FeatureEnsemble,
    mode: str = "activation",
    surrogate_seed: int = 0,
) -> list[np.ndarray]:
    """Per-learner feature blocks u_k = phi(F_k x / sqrt(d)), each n x p.

    mode "gaussian_surrogate" swaps the nonlinearity for its Gaussian
    equivalent kappa0 + kappa1 Fx/sqrt(d) + kappa_star z (ablation switch:
    with it the equivalence principle itself is no longer under test).
    """
    X = dataset_or_X.X if isinstance(dataset_or_X, SyntheticDataset) else np.asarray(dataset_or_X)
    if X.shape[1] != ensemble.d:
        raise ConfigError(f"inputs have d={X.shape[1]} but ensemble expects d={ensemble.d}")
    blocks = []
    pre = [X @ F.T / math.sqrt(ensemble.d) for F in ensemble.F_list]
    if mode == "activation":
        phi = ensemble.activation if ensemble.activation is not None else erf
        blocks = [phi(z) for z in pre]
    elif mode == "gaussian_surrogate":
        c = ensemble.coeffs
        rng = np.random.default_rng(surrogate_seed)
        for z in pre:
            blocks.append(c.kappa0 + c.kappa1 * z + c.kappa_star * rng.standard_normal(z.shape))
    else:
        raise ConfigError(f"unknown featurize mode {mode!r}")
    return blocks


@dataclass(frozen=True)
class TrainedEnsemble:
    W: np.ndarray  # p x K
    ensemble: FeatureEnsemble
    grad_norms: np.ndarray
    iterations: np.ndarray

    @property
    def K(self) -> int:
        return self.W.shape[1]


def train_ridge(features: Sequence[np.ndarray], y: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact regularized least squares per learner.

    One step of iterative refinement keeps the normal-equation residual near
    machine precision even at lam = 1e-6 close to the interpolation peak.
    """
    if not lam > 0:
        raise ConfigError("lam must be positive")
    ws, resids = [], []
    for U in features:
        n, p = U.shape
        A = U.T @ U / p
        A[np.diag_indices(p)] += lam
        b = U.T @ y / math.sqrt(p)
        try:
            w = np.linalg.solve(A, b)
            w += np.linalg.solve(A, b - A @ w)
        except np.linalg.LinAlgError as exc:
            cond = float(np.linalg.cond(A))
            raise NumericalError(f"ridge normal equations failed (cond ~ {cond:.2e})") from exc
        resid = float(np.linalg.norm(A @ w - b))
        if resid > 1e-10 * max(1.0, float(np.linalg.norm(b))):
            cond = float(np.linalg.cond(A))
            raise NumericalError(f"ridge optimality residual {resid:.2e} too large (cond ~ {cond:.2e})")
        ws.append(w)
        resids.append(resid)
    return np.column_stack(ws), np.array(resids)


def _logistic_objective(U: np.ndarray, y: np.ndarray, w: np.ndarray, lam: float) -> float:
    z = preactivation(U, w)
    return float(np.sum(np.logaddexp(0.0, -y * z)) + 0.5 * lam * w @ w)


def train_logistic(
    features: Sequence[np.ndarray],
    y: np.ndarray,
    lam: float,
    max_iter: int = 100,
    grad_tol_scale: float = 1e-9,
):
    """Newton with backtracking per learner, to near machine-precision gradients.

    Convergence target: |grad| <= grad_tol_scale * sqrt(p) on the summed
    objective, an order of magnitude below the 1e-8 sqrt(p) optimality
    contract and above the float64 cancellation floor of the gradient sums.
    """
    if not lam > 0:
        raise ConfigError("lam must be positive")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ConfigError("logistic training expects labels in {-1, +1}")
    ws, gns, its = [], [], []
    for U in features:
        n, p = U.shape
        sqrt_p = math.sqrt(p)
        tol = grad_tol_scale * sqrt_p
        w = np.zeros(p)
        gn = np.inf
        done_iters = max_iter
        for it in range(max_iter):
            z = preactivation(U, w)
            s = _stable_sigmoid(-y * z)  # = -d loss / d (y z)
            g = -U.T @ (y * s) / sqrt_p + lam * w
            gn = float(np.linalg.norm(g))
            if gn <= tol:
                done_iters = it
                break
            curv = s * (1.0 - s)
            H = (U.T * curv) @ U / p
            H[np.diag_indices(p)] += lam
            try:
                step = np.linalg.solve(H, g)
            except np.linalg.LinAlgError as exc:
                raise NumericalError("logistic Newton system failed") from exc
            obj = _logistic_objective(U, y, w, lam)
            slope = float(g @ step)
            t = 1.0
            while t > 1e-10:
                w_try = w - t * step
                if _logistic_objective(U, y, w_try, lam) <= obj - 1e-4 * t * slope:
                    break
                t *= 0.5
            w = w - t * step
        else:
            raise ConvergenceError(f"logistic Newton stalled at gradient norm {gn:.3e} (tol {tol:.1e})")
        ws.append(w)
        gns.append(gn)
        its.append(done_iters)
    return np.column_stack(ws), np.array(gns), np.array(its)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass(frozen=True)
class Overlaps:
    m: float
    q0: float
    q1: Optional[float]


def empirical_overlaps(trained: TrainedEnsemble) -> Overlaps:
    """Population overlaps of the trained weights via the equivalent Gaussian blocks.

    m_k = w_k . (kappa1 F_k theta / sqrt(d)) / sqrt(p d)
    q_kk' = w_k . Omega_kk' . w_k' / p, with the cross blocks kappa1^2 F_k F_k'^T / d.
    """
    ens = trained.ensemble
    p, d = ens.p, ens.d
    k1, ks2 = ens.coeffs.kappa1, ens.coeffs.kappa_star_sq
    K = trained.K
    ms, q0s, q1s = [], [], []
    projections = [ens.F_list[k].T @ trained.W[:, k] for k in range(K)]  # F_k^T w_k, shape d
    for k in range(K):
        w = trained.W[:, k]
        ms.append(k1 * float(w @ (ens.F_list[k] @ ens.theta)) / (d * math.sqrt(p)))
        q0s.append(k1**2 * float(projections[k] @ projections[k]) / (d * p) + ks2 * float(w @ w) / p)
    for a in range(K):
        for b in range(a + 1, K):
            q1s.append(k1**2 * float(projections[a] @ projections[b]) / (d * p))
    return Overlaps(
        m=float(np.mean(ms)),
        q0=float(np.mean(q0s)),
        q1=float(np.mean(q1s)) if q1s else None,
    )


# ---------------------------------------------------------------------------
# Full experiment driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    seed: object
    ok: bool
    m: float = math.nan
    q0: float = math.nan
    q1: float = math.nan
    train_loss: float = math.nan
    test_error: float = math.nan
    disagreement: float = math.nan
    grad_norm_max: float = math.nan
    error: str = ""


CSV_COLUMNS = [
    "trial",
    "seed",
    "ok",
    "m",
    "q0",
    "q1",
    "train_loss",
    "test_error",
    "disagreement",
    "grad_norm_max",
    "error",
]


@dataclass
class ExperimentResult:
    records: list
    n: int
    p: int
    d: int
    K: int
    estimator: str

    @property
    def failures(self) -> int:
        return sum(1 for r in self.records if not r.ok)

    def aggregate(self) -> dict:
        out = {"trials": len(self.records), "failures": self.failures}
        good = [r for r in self.records if r.ok]
        for name in ("m", "q0", "q1", "train_loss", "test_error", "disagreement"):
            vals = np.array([getattr(r, name) for r in good], dtype=float)
            vals = vals[np.isfinite(vals)]
            if len(vals) == 0:
                out[name] = {"mean": math.nan, "std_error": math.nan}
                continue
            se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
            out[name] = {"mean": float(np.mean(vals)), "std_error": se}
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            for r in self.records:
                writer.writerow({c: getattr(r, c) for c in CSV_COLUMNS})

    def summary_json(self) -> str:
        payload = {
            "sizes": {"n": self.n, "p": self.p, "d": self.d, "K": self.K},
            "estimator": self.estimator,
            "aggregate": self.aggregate(),
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _default_estimator(spec: ChannelSpec) -> str:
    return "mean" if spec.loss == "square" else "avg_sign"


def _predict(scores: np.ndarray, estimator: str) -> np.ndarray:
    if estimator == "mean":
        return scores.mean(axis=1)
    if estimator == "avg_sign":
        return np.where(scores.sum(axis=1) >= 0, 1.0, -1.0)
    if estimator == "majority":
        votes = np.where(scores >= 0, 1.0, -1.0).sum(axis=1)
        return np.where(votes >= 0, 1.0, -1.0)
    raise ConfigError(f"unknown estimator {estimator!r}")


def run_trial(
    trial: int,
    seed,
    spec: ChannelSpec,
    coeffs: ActivationCoeffs,
    n: int,
    p: int,
    d: int,
    K: int,
    rho: float,
    lam: float,
    estimator: str,
    activation: Optional[Callable] = None,
    test_samples: int = DEFAULT_TEST_SAMPLES,
    feature_mode: str = "activation",
) -> TrialRecord:
    try:
        dataset = generate_dataset(n, d, rho, spec.teacher, seed)
        ensemble = sample_feature_ensemble(
            K, p, d, coeffs, dataset.theta, seed=derive_seed(seed, "features"), activation=activation
        )
        features = featurize(dataset, ensemble, mode=feature_mode)
        if spec.loss == "square":
            W, grad_norms = train_ridge(features, dataset.y, lam)
            iters = np.zeros(K)
        elif spec.loss == "logistic":
            W, grad_norms, iters = train_logistic(features, dataset.y, lam)
        else:
            raise ConfigError(f"no trainer for loss {spec.loss!r}")
        grad_max = float(np.max(grad_norms))
        trained = TrainedEnsemble(W=W, ensemble=ensemble, grad_norms=grad_norms, iterations=iters)
        overlaps = empirical_overlaps(trained)

        z_train = np.column_stack([preactivation(U, W[:, k]) for k, U in enumerate(features)])
        if spec.loss == "square":
            train_loss = float(np.mean(0.5 * (dataset.y[:, None] - z_train) ** 2))
        else:
            train_loss = float(np.mean(np.logaddexp(0.0, -dataset.y[:, None] * z_train)))

        rng_test = np.random.default_rng(derive_seed(seed, "test"))
        X_test = rng_test.standard_normal((test_samples, d))
        y_test = apply_teacher(teacher_field(X_test, dataset.theta), spec.teacher)
        test_features = featurize(X_test, ensemble, mode=feature_mode)
        scores = np.column_stack([preactivation(U, W[:, k]) for k, U in enumerate(test_features)])
        y_hat = _predict(scores, estimator)
        if spec.loss == "square":
            test_error = float(np.mean((y_test - y_hat) ** 2))
        else:
            test_error = float(np.mean(y_test != y_hat))

        disagreement = math.nan
        if K >= 2 and spec.teacher == "sign":
            signs = np.where(scores >= 0, 1.0, -1.0)
            pair_dis = [
                float(np.mean(signs[:, a] != signs[:, b])) for a in range(K) for b in range(a + 1, K)
            ]
            disagreement = float(np.mean(pair_dis))
        return TrialRecord(
            trial=trial,
            seed=seed,
            ok=True,
            m=overlaps.m,
            q0=overlaps.q0,
            q1=overlaps.q1 if overlaps.q1 is not None else math.nan,
            train_loss=train_loss,
            test_error=test_error,
            disagreement=disagreement,
            grad_norm_max=grad_max,
        )
    except (ConfigError, DomainError, NumericalError, ConvergenceError) as exc:
        return TrialRecord(trial=trial, seed=seed, ok=False, error=f"{type(exc).__name__}: {exc}")


def run_experiment(
    spec: ChannelSpec,
    coeffs: ActivationCoeffs,
    n: int,
    p: int,
    d: int,
    K: int,
    rho: float,
    lam: float,
    trials: int,
    master_seed: int = 0,
    estimator: Optional[str] = None,
    activation: Optional[Callable] = None,
    test_samples: int = DEFAULT_TEST_SAMPLES,
    feature_mode: str = "activation",
    seeds: Optional[Sequence] = None,
    map_fn=map,
) -> ExperimentResult:
    """Run independent trials and aggregate; failures are recorded per trial.

    Trials are deterministic in (master_seed, trial index) or in the explicit
    seed list; `map_fn` may be an executor map for parallel runs.
    """
    if trials < 0:
        raise ConfigError("trials must be >= 0")
    estimator = estimator or _default_estimator(spec)
    if seeds is None:
        seeds = [(master_seed, t) for t in range(trials)]
    elif len(seeds) != trials:
        raise ConfigError("seed list length must equal trials")
    jobs = [
        (t, s, spec, coeffs, n, p, d, K, rho, lam, estimator, activation, test_samples, feature_mode)
        for t, s in enumerate(seeds)
    ]
    records = list(map_fn(_trial_worker, jobs))
    records.sort(key=lambda r: r.trial)
    return ExperimentResult(records=records, n=n, p=p, d=d, K=K, estimator=estimator)


def _trial_worker(args) -> TrialRecord:
    """Module-level so experiment jobs pickle into process pools."""
    (t, s, spec, coeffs, n, p, d, K, rho, lam, estimator, activation, test_samples, feature_mode) = args
    return run_trial(
        t, s, spec, coeffs, n, p, d, K, rho, lam, estimator,
        activation=activation, test_samples=test_samples, feature_mode=feature_mode,
    )
