"""Train/test splitting, least-squares calibration and adjusted R².

Every model minimises the sum of squared residuals over the TRAINING split.
VT-Micro is linear in log space and is fitted to ``ln(total_j)`` on the
samples with positive energy only. ARRB is fitted directly. AA-Micro is not
linear in its parameters; it is initialised by linear least squares on the
linear part and then refined jointly with a damped Gauss–Newton
(Levenberg–Marquardt) iteration using the analytic Jacobian.

Adjusted R² counts every coefficient except the constant slot as a
parameter: 15 for VT-Micro, 5 for ARRB, 29 for AA-Micro.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .consumption import (
    AA_HALF,
    DEFAULT_LAYOUTS,
    design_matrix,
    make_coefficients,
    predict,
)
from .energy import as_arrays, sort_samples
from .errors import DegenerateTargetError, RankDeficiencyError, SolverError, ValidationError
from .logger import log_event
from .models import (
    DEFAULT_EXPONENT_CLAMP,
    EnergySample,
    FitReport,
    GaussNewtonConfig,
    ModelCoefficients,
    ModelKind,
    SplitSpec,
    SplitStrategy,
)
from .utils import array_digest, finite_or_none

ENERGY_FLOOR = 1.0  # J, lower bound for the exponential-part initial level


def train_size(n: int, ratio: float) -> int:
    """``floor(ratio * n)`` computed on the decimal value of ``ratio``."""
    return math.floor(Fraction(str(ratio)) * n)


def split(
    samples: Sequence[EnergySample], spec: SplitSpec = SplitSpec()
) -> Tuple[List[EnergySample], List[EnergySample]]:
    """Partition samples into training and test sets.

    Samples are first put in ``(mode, run_id, t)`` order. Both parts keep
    that order.
    """
    n = len(samples)
    if n < 2:
        raise ValidationError(f"need at least 2 samples to split, got {n}")
    n_train = train_size(n, spec.train_ratio)
    if n_train == 0 or n_train == n:
        raise ValidationError(f"train ratio {spec.train_ratio} leaves an empty split for {n} samples")

    ordered = sort_samples(samples)
    if spec.strategy == SplitStrategy.SEQUENTIAL_PREFIX:
        chosen = np.arange(n_train)
    else:
        rng = np.random.default_rng(spec.seed)
        chosen = np.sort(rng.permutation(n)[:n_train])
    in_train = np.zeros(n, dtype=bool)
    in_train[chosen] = True
    train = [s for s, keep in zip(ordered, in_train) if keep]
    test = [s for s, keep in zip(ordered, in_train) if not keep]
    return train, test


def fit_linear_least_squares(design: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Least-squares coefficients through a QR factorisation.

    Columns are scaled to unit norm before factorising; a column whose
    diagonal entry of R vanishes (relative to the largest) is a linear
    combination of the earlier ones and is reported by index. One step of
    iterative refinement is applied to the solution.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(target, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"design {X.shape} and target {y.shape} do not conform")
    n, p = X.shape
    if n < p:
        raise ValidationError(f"need at least as many rows as columns ({n} < {p})")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("design and target must be finite")

    scale = np.linalg.norm(X, axis=0)
    zero = np.flatnonzero(scale == 0)
    if zero.size:
        raise RankDeficiencyError(int(zero[0]))
    Xs = X / scale

    Q, R = np.linalg.qr(Xs)
    diag = np.abs(np.diag(R))
    tol = max(n, p) * np.finfo(float).eps * diag.max()
    dependent = np.flatnonzero(diag <= tol)
    if dependent.size:
        raise RankDeficiencyError(int(dependent[0]))

    theta = np.linalg.solve(R, Q.T @ y)
    theta += np.linalg.solve(R, Q.T @ (y - Xs @ theta))
    return theta / scale


def adjusted_r2(target: Sequence[float], predicted: Sequence[float], p: int) -> float:
    """``1 - (1 - R²)(n - 1)/(n - p - 1)`` with SST taken about the target mean."""
    y = np.asarray(target, dtype=float)
    yhat = np.asarray(predicted, dtype=float)
    n = len(y)
    if len(yhat) != n:
        raise ValidationError("target and prediction lengths differ")
    if n <= p + 1:
        raise ValidationError(f"adjusted R² needs n > p + 1 (n={n}, p={p})")
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst <= np.finfo(float).eps * float(np.sum(y * y)):
        raise DegenerateTargetError("degenerate target: total sum of squares is zero")
    sse = float(np.sum((y - yhat) ** 2))
    r2 = 1.0 - sse / sst
    return 1.0 - (1.0 - r2) * (n - 1) / (n - p - 1)


def _safe_adjusted_r2(
    coeffs: ModelCoefficients, samples: Sequence[EnergySample], p: int, label: str
) -> Optional[float]:
    if not samples:
        return None
    v, a, j = as_arrays(samples)
    try:
        return finite_or_none(adjusted_r2(j, predict(coeffs, v, a), p))
    except (ValidationError, DegenerateTargetError) as e:
        log_event("r2_unavailable", logging.WARNING, kind=coeffs.kind.value, split=label, reason=str(e))
        return None


def _fit_meta(train: Sequence[EnergySample], **extra) -> dict:
    ordered = sort_samples(train)
    v, a, j = as_arrays(ordered)
    first, last = ordered[0], ordered[-1]
    return {
        "train_hash": array_digest(v, a, j),
        "n_train": len(ordered),
        "train_span": [[first.vehicle_mode.value, first.run_id, first.t],
                       [last.vehicle_mode.value, last.run_id, last.t]],
        **extra,
    }


def _report(kind: ModelKind, coeffs: ModelCoefficients, train, test, **fields) -> FitReport:
    p = len(coeffs.theta) - 1
    everything = list(train) + list(test or [])
    report = FitReport(
        kind=kind,
        coefficients=coeffs,
        r2_adj_train=_safe_adjusted_r2(coeffs, train, p, "train"),
        r2_adj_test=_safe_adjusted_r2(coeffs, test or [], p, "test"),
        r2_adj_all=_safe_adjusted_r2(coeffs, everything, p, "all"),
        n_train=len(train),
        n_test=len(test or []),
        n_params=len(coeffs.theta),
        **fields,
    )
    log_event("model_fitted", kind=kind.value, n_train=report.n_train, n_test=report.n_test,
              r2_adj_train=report.r2_adj_train, r2_adj_test=report.r2_adj_test,
              converged=report.converged)
    return report


def fit_vtmicro(train: Sequence[EnergySample], test: Optional[Sequence[EnergySample]] = None) -> FitReport:
    v, a, j = as_arrays(train)
    positive = j > 0
    if not positive.any():
        raise ValidationError("VT-Micro needs at least one sample with positive total energy")
    excluded = int((~positive).sum())
    if excluded:
        log_event("vtmicro_excluded_nonpositive", excluded=excluded, n_train=len(train))
    layout = DEFAULT_LAYOUTS[ModelKind.VT_MICRO]
    theta = fit_linear_least_squares(design_matrix(layout, v[positive], a[positive]), np.log(j[positive]))
    coeffs = make_coefficients(ModelKind.VT_MICRO, theta,
                               fit_meta=_fit_meta(train, excluded_nonpositive=excluded))
    return _report(ModelKind.VT_MICRO, coeffs, train, test, excluded_nonpositive=excluded)


def fit_arrb(train: Sequence[EnergySample], test: Optional[Sequence[EnergySample]] = None) -> FitReport:
    if len(train) < 6:
        raise ValidationError(f"ARRB needs at least 6 samples, got {len(train)}")
    v, a, j = as_arrays(train)
    theta = fit_linear_least_squares(design_matrix(DEFAULT_LAYOUTS[ModelKind.ARRB], v, a), j)
    coeffs = make_coefficients(ModelKind.ARRB, theta, fit_meta=_fit_meta(train))
    return _report(ModelKind.ARRB, coeffs, train, test)


@dataclass
class SolverResult:
    theta: np.ndarray
    iterations: int
    converged: bool
    stop_reason: str
    sse_history: List[float] = field(default_factory=list)


ResidualJacobian = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]


def _damped_step(J_scaled: np.ndarray, r: np.ndarray, damping: float) -> np.ndarray:
    # minimise |J d + r|^2 + damping |d|^2 through the augmented system
    p = J_scaled.shape[1]
    A = np.vstack([J_scaled, math.sqrt(damping) * np.eye(p)])
    b = np.concatenate([-r, np.zeros(p)])
    step, *_ = np.linalg.lstsq(A, b, rcond=None)
    return step


def damped_gauss_newton(
    fun: ResidualJacobian, theta0: np.ndarray, config: GaussNewtonConfig = GaussNewtonConfig()
) -> SolverResult:
    """Minimise ``|r(theta)|^2`` with multiplicatively adapted damping.

    ``fun`` returns the residual vector and its Jacobian. Damping acts on the
    column-scaled Jacobian; it is multiplied by ``damping_up`` after a rejected
    step and divided by ``damping_down`` after an accepted one. The iteration
    stops when the relative SSE improvement of an accepted step falls below
    ``rel_tol`` (converged), when no damping up to ``max_damping`` yields a
    descent (not converged), or after ``max_iters`` iterations.
    """
    theta = np.array(theta0, dtype=float)
    r, J = fun(theta)
    sse = float(r @ r)
    if not math.isfinite(sse):
        raise SolverError("objective is not finite at the initial point")
    history = [sse]
    damping = config.damping_init

    for iteration in range(config.max_iters):
        if sse == 0.0:
            return SolverResult(theta, iteration, True, "zero_residual", history)
        scale = np.linalg.norm(J, axis=0)
        scale[scale == 0] = 1.0
        J_scaled = J / scale

        solved_any = False
        accepted = None
        while damping <= config.max_damping:
            try:
                step = _damped_step(J_scaled, r, damping)
            except np.linalg.LinAlgError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                solved_any = True
                candidate = theta + step / scale
                r_new, J_new = fun(candidate)
                sse_new = float(r_new @ r_new)
                if math.isfinite(sse_new) and sse_new < sse:
                    accepted = (candidate, r_new, J_new, sse_new)
                    break
            damping *= config.damping_up

        if accepted is None:
            if not solved_any:
                raise SolverError(f"damped system could not be solved up to damping {config.max_damping:g}")
            log_event("solver_stopped", reason="damping_limit", iterations=iteration + 1, sse=sse)
            return SolverResult(theta, iteration + 1, False, "damping_limit", history)

        theta, r, J, sse_new = accepted
        improvement = (sse - sse_new) / sse
        sse = sse_new
        history.append(sse)
        damping = max(damping / config.damping_down, 1e-15)
        log_event("solver_iteration", logging.DEBUG, iteration=iteration + 1, sse=sse,
                  improvement=improvement, damping=damping)
        if improvement < config.rel_tol:
            log_event("solver_stopped", reason="rel_tol", iterations=iteration + 1, sse=sse)
            return SolverResult(theta, iteration + 1, True, "rel_tol", history)

    log_event("solver_stopped", reason="max_iters", iterations=config.max_iters, sse=sse)
    return SolverResult(theta, config.max_iters, False, "max_iters", history)


def aamicro_initial_theta(features: np.ndarray, target: np.ndarray,
                          exponent_clamp: float = DEFAULT_EXPONENT_CLAMP) -> np.ndarray:
    """Stage-1 parameters: linear part by least squares, exponent part a constant level.

    The level is the mean positive residual of the linear fit (at least
    ``ENERGY_FLOOR``), or fully suppressed when no residual is positive.
    """
    theta_linear = fit_linear_least_squares(features, target)
    residual = target - features @ theta_linear
    positive = residual[residual > 0]
    theta_exp = np.zeros(AA_HALF)
    if positive.size:
        theta_exp[0] = math.log(max(ENERGY_FLOOR, float(positive.mean())))
    else:
        theta_exp[0] = -exponent_clamp
    return np.concatenate([theta_linear, theta_exp])


def fit_aamicro(
    train: Sequence[EnergySample],
    test: Optional[Sequence[EnergySample]] = None,
    solver: GaussNewtonConfig = GaussNewtonConfig(),
    exponent_clamp: float = DEFAULT_EXPONENT_CLAMP,
) -> FitReport:
    n_params = 2 * AA_HALF
    if len(train) < n_params:
        raise ValidationError(f"AA-Micro needs at least {n_params} samples, got {len(train)}")
    v, a, j = as_arrays(train)
    features = design_matrix(DEFAULT_LAYOUTS[ModelKind.AA_MICRO][:AA_HALF], v, a)

    def residual_and_jacobian(theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        exponent = features @ theta[AA_HALF:]
        active = np.abs(exponent) < exponent_clamp
        level = np.exp(np.clip(exponent, -exponent_clamp, exponent_clamp))
        r = features @ theta[:AA_HALF] + level - j
        jac = np.hstack([features, features * (level * active)[:, None]])
        return r, jac

    theta0 = aamicro_initial_theta(features, j, exponent_clamp)
    result = damped_gauss_newton(residual_and_jacobian, theta0, solver)

    coeffs = make_coefficients(
        ModelKind.AA_MICRO, result.theta, exponent_clamp=exponent_clamp,
        fit_meta=_fit_meta(train, solver=solver.to_dict(), stop_reason=result.stop_reason,
                           iterations=result.iterations),
    )
    return _report(
        ModelKind.AA_MICRO, coeffs, train, test,
        solver_iterations=result.iterations,
        converged=result.converged,
        initial_sse=result.sse_history[0],
        final_sse=result.sse_history[-1],
        stop_reason=result.stop_reason,
        sse_history=list(result.sse_history),
    )


def fit_model(
    kind: ModelKind,
    train: Sequence[EnergySample],
    test: Optional[Sequence[EnergySample]] = None,
    solver: GaussNewtonConfig = GaussNewtonConfig(),
) -> FitReport:
    if kind == ModelKind.VT_MICRO:
        return fit_vtmicro(train, test)
    if kind == ModelKind.ARRB:
        return fit_arrb(train, test)
    return fit_aamicro(train, test, solver)
