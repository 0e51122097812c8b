"""Rotation conversions: axis-angle, unit quaternions, rotation matrices.

Quaternions are stored (w, x, y, z) and kept in a canonical sign:
w >= 0, and when w == 0 the first non-zero imaginary component is made
non-negative.  Canonicalization picks one representative of the {q, -q}
double cover so that quaternion differences are well defined.

Derivative helpers return exact analytic Jacobians; the small-angle
regime uses Taylor branches so every formula is smooth through zero.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError
from .mesh import JointNeighborhoods, KinematicTree

_SMALL_ANGLE = 1e-12
_TAYLOR_CUTOFF = 1e-4


def canonicalize_sign(q: np.ndarray) -> np.ndarray:
    """Flip q to -q if needed so the representative satisfies w >= 0."""
    q = np.asarray(q, dtype=np.float64)
    for component in q:
        if component > 0.0:
            return q.copy()
        if component < 0.0:
            return -q
    return q.copy()


def _sign_factor(q: np.ndarray) -> float:
    for component in q:
        if component > 0.0:
            return 1.0
        if component < 0.0:
            return -1.0
    return 1.0


def axis_angle_to_quaternion(v) -> np.ndarray:
    """Unit quaternion of the rotation by |v| radians about v/|v|."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise InvalidArgumentError(f"axis-angle vector must be a finite 3-vector, got {v!r}")
    angle = float(np.linalg.norm(v))
    if angle < _SMALL_ANGLE:
        # sin(a/2)/a ~ 1/2 - a^2/48 keeps the limit exact at zero.
        half_sinc = 0.5 - angle * angle / 48.0
        return canonicalize_sign(np.array([1.0, *(half_sinc * v)]))
    w = np.cos(angle / 2.0)
    xyz = np.sin(angle / 2.0) / angle * v
    return canonicalize_sign(np.array([w, xyz[0], xyz[1], xyz[2]]))


def axis_angle_to_quaternion_jacobian(v) -> tuple[np.ndarray, np.ndarray]:
    """Canonical quaternion of v together with its 4x3 Jacobian d q / d v."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise InvalidArgumentError(f"axis-angle vector must be a finite 3-vector, got {v!r}")
    angle = float(np.linalg.norm(v))
    if angle < _TAYLOR_CUTOFF:
        s = 0.5 - angle * angle / 48.0        # sin(a/2)/a
        u = -1.0 / 24.0 + angle * angle / 960.0  # (d s/d a)/a
    else:
        s = np.sin(angle / 2.0) / angle
        u = (0.5 * np.cos(angle / 2.0) - s) / (angle * angle)
    w = np.cos(angle / 2.0) if angle >= _SMALL_ANGLE else 1.0 - angle * angle / 8.0
    q = np.array([w, s * v[0], s * v[1], s * v[2]])
    jac = np.zeros((4, 3))
    jac[0, :] = -0.5 * s * v
    jac[1:, :] = s * np.eye(3) + u * np.outer(v, v)
    sign = _sign_factor(q)
    return sign * q, sign * jac


def quaternion_to_matrix(q) -> np.ndarray:
    """3x3 rotation matrix of a unit quaternion (w, x, y, z)."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise InvalidArgumentError(f"quaternion must be a 4-vector, got shape {q.shape}")
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > 1e-8:
        raise InvalidArgumentError(f"quaternion must have unit norm, got {norm}")
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _cross_matrix(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def axis_angle_to_matrix(v) -> np.ndarray:
    """Rotation matrix of an axis-angle vector (Rodrigues formula)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise InvalidArgumentError(f"axis-angle vector must be a finite 3-vector, got {v!r}")
    angle = float(np.linalg.norm(v))
    cross = _cross_matrix(v)
    if angle < _TAYLOR_CUTOFF:
        a = 1.0 - angle * angle / 6.0
        b = 0.5 - angle * angle / 24.0
    else:
        a = np.sin(angle) / angle
        b = (1.0 - np.cos(angle)) / (angle * angle)
    return np.eye(3) + a * cross + b * (cross @ cross)


def axis_angle_to_matrix_jacobian(v) -> tuple[np.ndarray, np.ndarray]:
    """Rotation matrix of v and the stack dR/dv_c for c in 0..2, shape (3, 3, 3)."""
    v = np.asarray(v, dtype=np.float64)
    angle = float(np.linalg.norm(v))
    cross = _cross_matrix(v)
    cross2 = cross @ cross
    if angle < _TAYLOR_CUTOFF:
        a = 1.0 - angle * angle / 6.0
        b = 0.5 - angle * angle / 24.0
        da = -1.0 / 3.0 + angle * angle / 30.0   # (d a/d angle)/angle
        db = -1.0 / 12.0 + angle * angle / 180.0  # (d b/d angle)/angle
    else:
        a = np.sin(angle) / angle
        b = (1.0 - np.cos(angle)) / (angle * angle)
        da = (np.cos(angle) - a) / (angle * angle)
        db = (a - 2.0 * b) / (angle * angle)
    rot = np.eye(3) + a * cross + b * cross2
    grads = np.empty((3, 3, 3))
    for c in range(3):
        ec = np.zeros(3)
        ec[c] = 1.0
        ec_cross = _cross_matrix(ec)
        grads[c] = (
            da * v[c] * cross
            + a * ec_cross
            + db * v[c] * cross2
            + b * (ec_cross @ cross + cross @ ec_cross)
        )
    return rot, grads


def pose_quaternions(theta: np.ndarray) -> np.ndarray:
    """Canonical per-joint quaternions of a 3K axis-angle pose vector, shape (K, 4)."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 1 or theta.size % 3 != 0:
        raise InvalidArgumentError(f"pose vector length must be a multiple of 3, got {theta.shape}")
    return np.stack([axis_angle_to_quaternion(theta[3 * k : 3 * k + 3]) for k in range(theta.size // 3)])


def pose_to_feature(
    theta: np.ndarray,
    tree: KinematicTree,
    nbhd: JointNeighborhoods,
    j: int,
    beta2: float,
) -> np.ndarray:
    """Regressor input for joint j: neighborhood quaternion offsets plus beta2.

    Concatenates (q_k - q*_k) over k in ne(j) order, then appends the
    girth shape coefficient.  Both quaternions are sign-canonicalized
    before differencing.  Length is 4 * |ne(j)| + 1.
    """
    if j == 0:
        raise InvalidArgumentError("the root joint has no pose corrective feature")
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (3 * tree.num_joints,):
        raise InvalidArgumentError(
            f"pose vector must have length {3 * tree.num_joints}, got {theta.shape}"
        )
    members = nbhd.of(j)
    feature = np.empty(4 * len(members) + 1)
    for slot, k in enumerate(members):
        q = axis_angle_to_quaternion(theta[3 * k : 3 * k + 3])
        q_rest = canonicalize_sign(tree.rest_quaternions[k])
        feature[4 * slot : 4 * slot + 4] = q - q_rest
    feature[-1] = beta2
    return feature
