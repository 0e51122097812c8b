"""Pose/shape fitting and PCA shape-space analysis.

Fitting minimizes the mean absolute vertex-coordinate error between the
model and a target vertex set, with pose and shape free, by gradient
descent with backtracking line search on a smooth |x| surrogate.  The
error is reported in 1000x model units (millimeters when the model is
metric).

The PCA half reproduces the explained-variance methodology: fit a basis
on one subject population, measure how much of another population's
centered variance the first k components reconstruct.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .body import BodyModel
from .errors import InvalidArgumentError


def v2v(a, b, per_vertex: bool = False) -> float:
    """Mean absolute vertex error between two 3N vectors, scaled by 1000.

    The default averages absolute per-coordinate residuals; with
    ``per_vertex=True`` it averages Euclidean per-vertex distances
    instead (an alternative reporting convention).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size % 3 != 0:
        raise InvalidArgumentError(f"expected equal-length 3N vectors, got {a.shape} and {b.shape}")
    residual = a - b
    if per_vertex:
        return float(np.linalg.norm(residual.reshape(-1, 3), axis=1).mean()) * 1000.0
    return float(np.abs(residual).mean()) * 1000.0


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 500
    tolerance: float = 1e-8  # relative objective decrease that counts as converged
    shape_coeffs: int | None = None  # optimize only the first c coefficients
    delta: float = 1e-8  # |x| ~ sqrt(x^2 + delta^2) smoothing
    per_vertex_metric: bool = False

    def __post_init__(self):
        if self.max_iterations < 0:
            raise InvalidArgumentError("max_iterations must be >= 0")
        if self.shape_coeffs is not None and self.shape_coeffs < 0:
            raise InvalidArgumentError("shape_coeffs must be >= 0")


@dataclass(frozen=True)
class FitResult:
    pose: np.ndarray
    shape: np.ndarray
    v2v_error: float  # 1000x model units
    iterations: int
    converged: bool

    def to_dict(self) -> dict:
        return {
            "pose": self.pose.tolist(),
            "shape": self.shape.tolist(),
            "v2v": self.v2v_error,
            "iterations": self.iterations,
            "converged": self.converged,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _smooth_abs_objective(residual: np.ndarray, delta: float) -> tuple[float, np.ndarray]:
    root = np.sqrt(residual * residual + delta * delta)
    return float(root.mean()), residual / (root * residual.size)


def fit(
    model: BodyModel,
    target,
    initial_pose=None,
    initial_shape=None,
    options: FitOptions | None = None,
) -> FitResult:
    """Recover pose and shape that reproduce the target vertices.

    The returned parameters never score worse than the initialization:
    line-search steps are only accepted when the surrogate objective
    decreases, and the final report compares against the start.
    """
    options = options or FitOptions()
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (3 * model.num_vertices,):
        raise InvalidArgumentError(
            f"target must have length {3 * model.num_vertices}, got {target.shape}"
        )
    if not np.all(np.isfinite(target)):
        raise InvalidArgumentError("target vertices must be finite")

    theta = (
        np.zeros(3 * model.num_joints)
        if initial_pose is None
        else np.asarray(initial_pose, dtype=np.float64).copy()
    )
    beta = np.zeros(model.num_shape_coeffs)
    if initial_shape is not None:
        init = np.atleast_1d(np.asarray(initial_shape, dtype=np.float64))
        beta[: init.size] = init
    free_coeffs = model.num_shape_coeffs if options.shape_coeffs is None else min(
        options.shape_coeffs, model.num_shape_coeffs
    )

    init_error = v2v(model.forward_vertices(beta, theta), target, options.per_vertex_metric)
    init_theta, init_beta = theta.copy(), beta.copy()

    out = model.forward_vertices(beta, theta)
    objective, _ = _smooth_abs_objective(out - target, options.delta)
    converged = False
    iterations = 0
    step = 1.0
    for _ in range(options.max_iterations):
        _, weight = _smooth_abs_objective(out - target, options.delta)
        jac = model.forward_jacobian(beta, theta)
        g_theta = jac.wrt_pose.T @ weight
        g_beta = jac.wrt_shape[:, :free_coeffs].T @ weight
        g_norm_sq = float(g_theta @ g_theta + g_beta @ g_beta)
        if g_norm_sq == 0.0:
            converged = True
            break
        step = min(step * 2.0, 1e6)
        accepted = False
        while step > 1e-14:
            trial_theta = theta - step * g_theta
            trial_beta = beta.copy()
            trial_beta[:free_coeffs] -= step * g_beta
            trial_out = model.forward_vertices(trial_beta, trial_theta)
            trial_obj, _ = _smooth_abs_objective(trial_out - target, options.delta)
            if trial_obj <= objective - 1e-4 * step * g_norm_sq:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break  # no descent at minimal step: flagged as not converged
        iterations += 1
        relative_drop = (objective - trial_obj) / max(objective, 1e-300)
        theta, beta, out, objective = trial_theta, trial_beta, trial_out, trial_obj
        if relative_drop < options.tolerance:
            converged = True
            break
    else:
        converged = False

    final_error = v2v(out, target, options.per_vertex_metric)
    if final_error > init_error:
        theta, beta, final_error = init_theta, init_beta, init_error
    return FitResult(
        pose=theta,
        shape=beta,
        v2v_error=final_error,
        iterations=iterations,
        converged=converged,
    )


# ------------------------------------------------------------------------ PCA


@dataclass(frozen=True)
class PcaBasis:
    """Mean, orthonormal components (columns) and per-component variances."""

    mean: np.ndarray  # (D,)
    components: np.ndarray  # (D, k), orthonormal columns
    variances: np.ndarray  # (k,), non-increasing

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "components", np.asarray(self.components, dtype=np.float64))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=np.float64))
        k = self.components.shape[1]
        if self.variances.shape != (k,):
            raise InvalidArgumentError("one variance per component required")
        if k:
            gram = self.components.T @ self.components
            if np.abs(gram - np.eye(k)).max() > 1e-8:
                raise InvalidArgumentError("components must be orthonormal within 1e-8")
            if np.any(np.diff(self.variances) > 1e-12):
                raise InvalidArgumentError("variances must be non-increasing")

    @property
    def num_components(self) -> int:
        return self.components.shape[1]


def pca_fit(data, k: int) -> PcaBasis:
    """Top-k principal components of mean-centered subject rows.

    Component signs are fixed by making each column's largest-magnitude
    entry positive, so bases are reproducible across runs.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise InvalidArgumentError("data must be a matrix with at least 2 subject rows")
    m, d = data.shape
    if k < 0 or k > min(m - 1, d):
        raise InvalidArgumentError(f"k must be in [0, {min(m - 1, d)}], got {k}")
    mean = data.mean(axis=0)
    centered = data - mean
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    scale = max(1.0, float(np.abs(centered).max()))
    if k > 0 and singular[0] <= 1e-12 * scale:
        raise InvalidArgumentError("data rows are identical; only k = 0 is valid")
    components = vt[:k].T.copy()
    for col in range(k):
        lead = np.argmax(np.abs(components[:, col]))
        if components[lead, col] < 0.0:
            components[:, col] = -components[:, col]
    variances = (singular[:k] ** 2) / (m - 1)
    return PcaBasis(mean=mean, components=components, variances=variances)


def explained_variance(basis: PcaBasis, data, k: int) -> float:
    """Percentage of the data's variance about the basis mean captured by k components."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != basis.mean.size:
        raise InvalidArgumentError("data rows must match the basis dimension")
    if k < 0 or k > basis.num_components:
        raise InvalidArgumentError(f"k must be in [0, {basis.num_components}], got {k}")
    centered = data - basis.mean
    total = float(np.sum(centered * centered))
    if total == 0.0:
        return 100.0
    if k == 0:
        return 0.0
    projection = centered @ basis.components[:, :k]
    residual = centered - projection @ basis.components[:, :k].T
    return 100.0 * (1.0 - float(np.sum(residual * residual)) / total)
