"""Regularized reconstruction from bucket measurements.

Two estimators are provided:

* ridge: ``min 1/2||y - Phi x||^2 + lam/2 ||L x||^2`` solved through its
  normal equations with conjugate gradients;
* tv: ``min 1/2||y - Phi x||^2 + lam ||D x||_1`` (anisotropic) solved with a
  monotone accelerated proximal-gradient method whose prox is computed by
  projected gradient on the dual.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from scipy import sparse

from spx.errors import InvalidArgument, SingularSystem
from spx.patterns import SensingOperator

POWER_ITERS = 50
POWER_TOL = 1e-6
LIPSCHITZ_INFLATION = 1.01
PROX_INNER_ITERS = 20
# ||D||^2 <= 8 for 2-D forward differences
DUAL_STEP = 1.0 / 8.0


@dataclass(frozen=True)
class ReconConfig:
    method: Literal["ridge", "tv"] = "ridge"
    lam: float = 0.0
    regularizer: Literal["identity", "laplacian"] = "laplacian"
    max_iters: int = 2000
    tol: Optional[float] = None
    step_rule: Literal["power_iteration"] = "power_iteration"

    def __post_init__(self):
        if self.method not in ("ridge", "tv"):
            raise InvalidArgument(f"unknown method {self.method!r}")
        if self.regularizer not in ("identity", "laplacian"):
            raise InvalidArgument(f"unknown regularizer {self.regularizer!r}")
        if self.lam < 0:
            raise InvalidArgument("lambda must be non-negative")
        if self.max_iters < 1:
            raise InvalidArgument("max_iters must be >= 1")
        if self.tol is not None and self.tol <= 0:
            raise InvalidArgument("tol must be positive")
        if self.step_rule != "power_iteration":
            raise InvalidArgument(f"unknown step rule {self.step_rule!r}")

    @property
    def resolved_tol(self) -> float:
        if self.tol is not None:
            return self.tol
        return 1e-8 if self.method == "ridge" else 1e-6


@dataclass(frozen=True, eq=False)
class GradientOperator:
    """Forward differences ``D`` (``2N x N``): vertical block then horizontal block."""

    height: int
    width: int
    matrix: sparse.csr_matrix

    def __matmul__(self, x):
        return self.matrix @ x

    @property
    def T(self):
        return self.matrix.T


@dataclass(eq=False)
class ReconResult:
    x_hat: np.ndarray
    iterations: int
    final_objective: float
    objective_trace: list[float] = field(default_factory=list)
    residual_trace: list[float] = field(default_factory=list)
    converged: bool = False

    def image(self, height: int, width: int) -> np.ndarray:
        return self.x_hat.reshape(height, width)


def _diff_1d(n: int) -> sparse.csr_matrix:
    # Forward difference with replicate boundary: last row is zero.
    if n == 1:
        return sparse.csr_matrix((1, 1))
    main = -np.ones(n)
    main[-1] = 0.0
    upper = np.ones(n - 1)
    return sparse.diags([main, upper], [0, 1], shape=(n, n), format="csr")


def build_gradient_operator(h: int, w: int) -> GradientOperator:
    if h < 1 or w < 1:
        raise InvalidArgument(f"image size must be positive, got {h}x{w}")
    vertical = sparse.kron(_diff_1d(h), sparse.identity(w), format="csr")
    horizontal = sparse.kron(sparse.identity(h), _diff_1d(w), format="csr")
    matrix = sparse.vstack([vertical, horizontal], format="csr")
    matrix.eliminate_zeros()
    return GradientOperator(h, w, matrix)


def laplacian_operator(h: int, w: int) -> sparse.csr_matrix:
    """5-point Laplacian with replicate (Neumann) boundary, equal to ``D^T D``."""
    grad = build_gradient_operator(h, w).matrix
    return (grad.T @ grad).tocsr()


def _check(op: SensingOperator, *vectors: tuple[np.ndarray, int]) -> None:
    for vec, expected in vectors:
        if vec.shape != (expected,):
            raise InvalidArgument(f"vector of shape {vec.shape}, expected ({expected},)")


def data_gradient(op: SensingOperator, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of ``1/2 ||y - Phi x||^2``: ``Phi^T (Phi x - y)``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check(op, (x, op.n_pixels), (y, op.m))
    phi = op.effective
    return phi.T @ (phi @ x - y)


def _regularizer(op: SensingOperator, cfg: ReconConfig):
    if cfg.regularizer == "identity":
        return None
    return laplacian_operator(op.height, op.width)


def ridge_objective(op: SensingOperator, x: np.ndarray, y: np.ndarray, lam: float, reg=None) -> float:
    r = y - op.effective @ x
    penalty = x if reg is None else reg @ x
    return 0.5 * float(r @ r) + 0.5 * lam * float(penalty @ penalty)


def reconstruct_ridge(op: SensingOperator, y: np.ndarray, cfg: ReconConfig = ReconConfig()) -> ReconResult:
    """Conjugate gradients on ``(Phi^T Phi + lam L^T L) x = Phi^T y``.

    The system matrix is only applied as chained products. Iteration stops
    when ``||r|| / ||Phi^T y|| <= tol``; on hitting ``max_iters`` the iterate
    with the smallest residual is returned with ``converged=False``.
    """
    y = np.asarray(y, dtype=np.float64)
    _check(op, (y, op.m))
    if cfg.lam == 0 and op.m < op.n_pixels:
        raise SingularSystem(
            f"lambda = 0 with M = {op.m} < N = {op.n_pixels}: normal equations are singular"
        )
    phi = op.effective
    reg = _regularizer(op, cfg)
    tol = cfg.resolved_tol

    def apply(v):
        out = phi.T @ (phi @ v)
        if cfg.lam:
            out = out + cfg.lam * (v if reg is None else reg.T @ (reg @ v))
        return out

    b = phi.T @ y
    b_norm = float(np.linalg.norm(b))
    x = np.zeros(op.n_pixels)
    if b_norm == 0.0:
        obj = ridge_objective(op, x, y, cfg.lam, reg)
        return ReconResult(x, 0, obj, [obj], [0.0], True)

    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    objectives, residuals = [], []
    best_x, best_res = x.copy(), 1.0
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        ap = apply(p)
        curvature = float(p @ ap)
        if curvature <= 0:
            raise SingularSystem("normal-equation matrix is not positive definite")
        alpha = rr / curvature
        x = x + alpha * p
        r = r - alpha * ap
        rr_new = float(r @ r)
        rel = np.sqrt(rr_new) / b_norm
        objectives.append(ridge_objective(op, x, y, cfg.lam, reg))
        residuals.append(rel)
        if rel < best_res:
            best_x, best_res = x.copy(), rel
        if rel <= tol:
            converged = True
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    x_out = x if converged else best_x
    return ReconResult(
        x_out,
        it,
        ridge_objective(op, x_out, y, cfg.lam, reg),
        objectives,
        residuals,
        converged,
    )


def lipschitz_estimate(phi: np.ndarray, seed: int = 0) -> float:
    """Largest eigenvalue of ``Phi^T Phi`` by power iteration, inflated by 1%."""
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(phi.shape[1])
    v /= np.linalg.norm(v)
    estimate = 0.0
    for _ in range(POWER_ITERS):
        w = phi.T @ (phi @ v)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            return 1.0
        v = w / norm
        if abs(norm - estimate) <= POWER_TOL * norm:
            estimate = norm
            break
        estimate = norm
    return LIPSCHITZ_INFLATION * estimate


def _prox_tv(v: np.ndarray, grad: GradientOperator, thresh: float, dual: np.ndarray) -> np.ndarray:
    """Approximate ``prox_{thresh ||D.||_1}(v)`` in place on the warm-started ``dual``.

    The dual problem ``min_{|p|<=thresh} 1/2 ||v - D^T p||^2`` is solved by a
    fixed number of projected gradient steps; the primal point is
    ``v - D^T p``.
    """
    d, dt = grad.matrix, grad.matrix.T
    for _ in range(PROX_INNER_ITERS):
        dual += DUAL_STEP * (d @ (v - dt @ dual))
        np.clip(dual, -thresh, thresh, out=dual)
    return v - dt @ dual


def tv_objective(phi: np.ndarray, grad: GradientOperator, x: np.ndarray, y: np.ndarray, lam: float) -> float:
    r = y - phi @ x
    return 0.5 * float(r @ r) + lam * float(np.abs(grad @ x).sum())


def reconstruct_tv(op: SensingOperator, y: np.ndarray, cfg: ReconConfig = ReconConfig(method="tv")) -> ReconResult:
    """Anisotropic TV-regularized least squares.

    Uses the monotone variant of FISTA: each candidate is accepted only if it
    does not increase the objective, so the recorded trace is nonincreasing
    even though the inner prox is inexact. The step is ``1/L`` with ``L`` the
    power-iteration estimate of ``||Phi||^2``. Iteration stops when an
    accepted step changes the objective by at most ``tol`` relative.
    """
    y = np.asarray(y, dtype=np.float64)
    _check(op, (y, op.m))
    phi = op.effective
    grad = build_gradient_operator(op.height, op.width)
    tol = cfg.resolved_tol
    step = 1.0 / lipschitz_estimate(phi)
    thresh = step * cfg.lam
    dual = np.zeros(grad.matrix.shape[0])

    x = np.zeros(op.n_pixels)
    z = x.copy()
    t = 1.0
    obj = tv_objective(phi, grad, x, y, cfg.lam)
    objectives, residuals = [obj], [_rel_residual(phi, x, y)]
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        v = z - step * (phi.T @ (phi @ z - y))
        cand = _prox_tv(v, grad, thresh, dual) if cfg.lam > 0 else v
        cand_obj = tv_objective(phi, grad, cand, y, cfg.lam)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        accepted = cand_obj <= obj
        x_prev = x
        if accepted:
            x, new_obj = cand, cand_obj
        else:
            new_obj = obj
        z = x + (t / t_next) * (cand - x) + ((t - 1.0) / t_next) * (x - x_prev)
        t = t_next
        change = abs(obj - new_obj) / max(abs(obj), np.finfo(float).tiny)
        obj = new_obj
        objectives.append(obj)
        residuals.append(_rel_residual(phi, x, y))
        if obj == 0.0 or (accepted and change <= tol):
            converged = True
            break
    return ReconResult(x, it, obj, objectives, residuals, converged)


def _rel_residual(phi: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    y_norm = float(np.linalg.norm(y))
    r = float(np.linalg.norm(phi @ x - y))
    return r / y_norm if y_norm > 0 else r


def reconstruct(op: SensingOperator, y: np.ndarray, cfg: ReconConfig) -> ReconResult:
    if cfg.method == "ridge":
        return reconstruct_ridge(op, y, cfg)
    return reconstruct_tv(op, y, cfg)


def psnr(x_hat: np.ndarray, x: np.ndarray, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(x_hat) - np.asarray(x)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(peak**2 / mse)
