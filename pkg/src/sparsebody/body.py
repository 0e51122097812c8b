"""The articulated body model.

A :class:`BodyModel` combines a template mesh, a PCA shape space, a
joint regressor, linear-blend-skinning weights and one sparse pose
corrective per non-root joint.  Posing a body runs four stages:

1. shape offsets move the template to the subject's identity,
2. joints are regressed from the shaped vertices,
3. per-joint correctives (gated by ReLU activation weights) deform the
   shaped template further, conditioned on neighborhood quaternion
   offsets and the girth shape coefficient,
4. linear blend skinning poses the result around the joints.

Models are immutable after construction; every operation here is a pure
function of its inputs, so shared models can be posed concurrently.
Joint 0 is always the root and carries no corrective.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgumentError, ValidationError
from .mesh import JointNeighborhoods, KinematicTree, Mesh
from .rotations import (
    axis_angle_to_matrix,
    axis_angle_to_matrix_jacobian,
    axis_angle_to_quaternion_jacobian,
    canonicalize_sign,
    pose_quaternions,
)

MAX_SHAPE_COEFFS = 300


@dataclass(frozen=True)
class CorrectiveTable:
    """Pose corrective regressor of one joint in compressed row form.

    ``table[r]`` holds the 3 x C coefficient block of vertex
    ``vertex_ids[r]``; vertices that are not listed contribute exactly
    zero offset.  A dense table simply lists every vertex.
    """

    vertex_ids: np.ndarray  # (m,) int64, strictly increasing
    table: np.ndarray  # (m, 3, C) float64

    def __post_init__(self):
        ids = np.asarray(self.vertex_ids, dtype=np.int64)
        tab = np.asarray(self.table, dtype=np.float64)
        if ids.ndim != 1 or tab.ndim != 3 or tab.shape[0] != ids.shape[0] or tab.shape[1] != 3:
            raise ValidationError(
                f"corrective block shapes inconsistent: ids {ids.shape}, table {tab.shape}"
            )
        if ids.size and np.any(np.diff(ids) <= 0):
            raise ValidationError("corrective vertex ids must be strictly increasing")
        object.__setattr__(self, "vertex_ids", ids)
        object.__setattr__(self, "table", tab)

    @property
    def feature_size(self) -> int:
        return self.table.shape[2]

    @staticmethod
    def dense(table: np.ndarray) -> "CorrectiveTable":
        table = np.asarray(table, dtype=np.float64)
        return CorrectiveTable(np.arange(table.shape[0], dtype=np.int64), table)


class ParameterCount(NamedTuple):
    nonzero: int
    dense: int


class ForwardJacobian(NamedTuple):
    wrt_pose: np.ndarray  # (3N, 3K), vertex-major rows
    wrt_shape: np.ndarray  # (3N, num_shape_coeffs)


@dataclass(frozen=True)
class BodyModel:
    """All parameters of one articulated body model."""

    template: np.ndarray  # (3N,) rest-pose vertices, vertex-major
    shape_dirs: np.ndarray  # (3N, S) identity offset directions
    joint_regressor: np.ndarray  # (K, N) convex vertex weights per joint
    skinning_weights: np.ndarray  # (N, K) convex joint weights per vertex
    correctives: tuple[CorrectiveTable, ...]  # index j-1 belongs to joint j
    activations: np.ndarray  # (K-1, N); row j-1 gates joint j's corrective
    tree: KinematicTree
    neighborhoods: JointNeighborhoods
    faces: np.ndarray  # (F, 3) template face connectivity
    beta2_index: int = 1  # shape coefficient fed to the correctives
    pruned: bool = False

    def __post_init__(self):
        object.__setattr__(self, "template", np.asarray(self.template, dtype=np.float64))
        object.__setattr__(self, "shape_dirs", np.asarray(self.shape_dirs, dtype=np.float64))
        object.__setattr__(self, "joint_regressor", np.asarray(self.joint_regressor, dtype=np.float64))
        object.__setattr__(self, "skinning_weights", np.asarray(self.skinning_weights, dtype=np.float64))
        object.__setattr__(self, "activations", np.asarray(self.activations, dtype=np.float64))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64))
        object.__setattr__(self, "correctives", tuple(self.correctives))
        self._check_shapes()

    def _check_shapes(self):
        n, k = self.num_vertices, self.num_joints
        if self.template.ndim != 1 or self.template.size % 3 != 0:
            raise ValidationError(f"template must be a 3N vector, got {self.template.shape}")
        if self.shape_dirs.shape[0] != 3 * n:
            raise ValidationError("shape_dirs row count must be 3N")
        if self.shape_dirs.shape[1] > MAX_SHAPE_COEFFS:
            raise ValidationError(f"at most {MAX_SHAPE_COEFFS} shape coefficients are supported")
        if self.joint_regressor.shape != (k, n):
            raise ValidationError(f"joint_regressor must be ({k}, {n})")
        if self.skinning_weights.shape != (n, k):
            raise ValidationError(f"skinning_weights must be ({n}, {k})")
        if self.activations.shape != (k - 1, n):
            raise ValidationError(f"activations must be ({k - 1}, {n})")
        if len(self.correctives) != k - 1:
            raise ValidationError(f"expected {k - 1} corrective tables, got {len(self.correctives)}")
        for j in range(1, k):
            expected = self.neighborhoods.feature_length(j)
            block = self.correctives[j - 1]
            if block.feature_size != expected:
                raise ValidationError(
                    f"joint {j}: corrective feature size {block.feature_size}, expected {expected}"
                )
            if block.vertex_ids.size and block.vertex_ids[-1] >= n:
                raise ValidationError(f"joint {j}: corrective vertex id out of range")

    # ----------------------------------------------------------------- basics

    @property
    def num_vertices(self) -> int:
        return self.template.size // 3

    @property
    def num_joints(self) -> int:
        return self.tree.num_joints

    @property
    def num_shape_coeffs(self) -> int:
        return self.shape_dirs.shape[1]

    def rest_pose(self) -> np.ndarray:
        return np.zeros(3 * self.num_joints)

    def template_mesh(self) -> Mesh:
        return Mesh(self.template.reshape(-1, 3), self.faces)

    def _pad_beta(self, beta) -> np.ndarray:
        beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
        if beta.size > self.num_shape_coeffs:
            raise InvalidArgumentError(
                f"got {beta.size} shape coefficients, model supports {self.num_shape_coeffs}"
            )
        if not np.all(np.isfinite(beta)):
            raise InvalidArgumentError("shape coefficients must be finite")
        full = np.zeros(self.num_shape_coeffs)
        full[: beta.size] = beta
        return full

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (3 * self.num_joints,):
            raise InvalidArgumentError(
                f"pose vector must have length {3 * self.num_joints}, got {theta.shape}"
            )
        if not np.all(np.isfinite(theta)):
            raise InvalidArgumentError("pose vector must be finite")
        return theta

    def beta2_of(self, beta) -> float:
        full = self._pad_beta(beta)
        if self.beta2_index >= full.size:
            return 0.0
        return float(full[self.beta2_index])

    # ------------------------------------------------------------ shape stage

    def shape_blend(self, beta) -> np.ndarray:
        """Identity offsets: the shape directions weighted by beta."""
        full = self._pad_beta(beta)
        return self.shape_dirs @ full

    def shaped_vertices(self, beta) -> np.ndarray:
        return self.template + self.shape_blend(beta)

    def regress_joints(self, v_shaped) -> np.ndarray:
        """Rest-pose joint locations as convex combinations of shaped vertices."""
        v_shaped = np.asarray(v_shaped, dtype=np.float64)
        if v_shaped.shape != (3 * self.num_vertices,):
            raise InvalidArgumentError(
                f"shaped vertices must have length {3 * self.num_vertices}"
            )
        return (self.joint_regressor @ v_shaped.reshape(-1, 3)).ravel()

    # ------------------------------------------------------- corrective stage

    def _require_non_root(self, j: int):
        if j == 0:
            raise InvalidArgumentError("the root joint has no pose corrective")
        if j < 0 or j >= self.num_joints:
            raise InvalidArgumentError(f"joint index {j} out of range")

    def activation(self, j: int) -> np.ndarray:
        """ReLU-gated activation weights of joint j, one value per vertex."""
        self._require_non_root(j)
        return np.maximum(self.activations[j - 1], 0.0)

    def support_set(self, j: int) -> np.ndarray:
        """Vertices whose activation for joint j is strictly positive."""
        self._require_non_root(j)
        return np.flatnonzero(self.activations[j - 1] > 0.0)

    def _features(self, theta: np.ndarray, beta2: float) -> list[np.ndarray]:
        quats = pose_quaternions(theta)
        rest = np.stack([canonicalize_sign(q) for q in self.tree.rest_quaternions])
        delta = quats - rest
        features = []
        for j in range(1, self.num_joints):
            members = self.neighborhoods.of(j)
            f = np.empty(4 * len(members) + 1)
            for slot, k in enumerate(members):
                f[4 * slot : 4 * slot + 4] = delta[k]
            f[-1] = beta2
            features.append(f)
        return features

    def _corrective_vertices(self, block: CorrectiveTable, j: int, feature: np.ndarray) -> np.ndarray:
        """Masked corrective offsets of joint j, shape (N, 3)."""
        offsets = np.zeros((self.num_vertices, 3))
        raw = block.table @ feature
        gate = np.maximum(self.activations[j - 1][block.vertex_ids], 0.0)
        offsets[block.vertex_ids] = gate[:, None] * raw
        return offsets

    def pose_corrective_joint(self, theta, beta2: float, j: int) -> np.ndarray:
        """Corrective offsets contributed by joint j alone, as a 3N vector."""
        self._require_non_root(j)
        theta = self._check_theta(theta)
        feature = self._features(theta, float(beta2))[j - 1]
        return self._corrective_vertices(self.correctives[j - 1], j, feature).ravel()

    def pose_correctives(self, theta, beta2: float) -> np.ndarray:
        """Sum of all per-joint corrective offsets, ascending joint order."""
        theta = self._check_theta(theta)
        features = self._features(theta, float(beta2))
        total = np.zeros((self.num_vertices, 3))
        for j in range(1, self.num_joints):
            total += self._corrective_vertices(self.correctives[j - 1], j, features[j - 1])
        return total.ravel()

    def posed_template(self, beta, theta) -> np.ndarray:
        """Shaped vertices plus pose correctives, before skinning."""
        return self.shaped_vertices(beta) + self.pose_correctives(theta, self.beta2_of(beta))

    def rest_pose_corrective_magnitude(self, beta2: float) -> float:
        """Corrective norm at the rest pose.

        Non-zero whenever beta2 is non-zero, because the correctives are
        conditioned on it even when no joint is rotated.  Useful as a
        diagnostic when judging whether a trained model leaks shape into
        the pose correctives.
        """
        return float(np.linalg.norm(self.pose_correctives(self.rest_pose(), beta2)))

    # --------------------------------------------------------------- skinning

    def _local_rotations(self, theta: np.ndarray) -> np.ndarray:
        return np.stack(
            [axis_angle_to_matrix(theta[3 * k : 3 * k + 3]) for k in range(self.num_joints)]
        )

    def _global_transforms(self, joints: np.ndarray, rotations: np.ndarray):
        """Compose local rotations about rest joints into world transforms."""
        k = self.num_joints
        world_rot = np.empty((k, 3, 3))
        world_t = np.empty((k, 3))
        world_rot[0] = rotations[0]
        world_t[0] = joints[0]
        for j in range(1, k):
            p = self.tree.parents[j]
            world_rot[j] = world_rot[p] @ rotations[j]
            world_t[j] = world_t[p] + world_rot[p] @ (joints[j] - joints[p])
        return world_rot, world_t

    def lbs(self, t_p, joints, theta) -> np.ndarray:
        """Linear blend skinning of the posed template around the joints.

        Each joint's transform is its world rotation applied about its
        rest position, i.e. vertices move with
        ``R_k (x - j_k) + j_k_posed`` blended by the skinning weights.
        At the rest pose every transform is the identity.  The einsum
        evaluation order here is the single source of truth; training
        reuses it so residuals of self-generated data are exactly zero.
        """
        theta = self._check_theta(theta)
        t_p = np.asarray(t_p, dtype=np.float64).reshape(self.num_vertices, 3)
        joints = np.asarray(joints, dtype=np.float64).reshape(self.num_joints, 3)
        rotations = self._local_rotations(theta)
        world_rot, world_t = self._global_transforms(joints, rotations)
        skin_trans = world_t - np.einsum("kab,kb->ka", world_rot, joints)
        posed_parts = np.einsum("kab,nb->nka", world_rot, t_p) + skin_trans[None, :, :]
        return np.einsum("nk,nka->na", self.skinning_weights, posed_parts).ravel()

    def posed_joints(self, beta, theta) -> np.ndarray:
        """World joint positions for the given shape and pose, length 3K."""
        theta = self._check_theta(theta)
        joints = self.regress_joints(self.shaped_vertices(beta)).reshape(-1, 3)
        _, world_t = self._global_transforms(joints, self._local_rotations(theta))
        return world_t.ravel()

    def forward_vertices(self, beta, theta) -> np.ndarray:
        """Posed vertices as a 3N vector (the full model evaluation)."""
        v_shaped = self.shaped_vertices(beta)
        joints = self.regress_joints(v_shaped)
        t_p = v_shaped + self.pose_correctives(theta, self.beta2_of(beta))
        return self.lbs(t_p, joints, theta)

    def forward(self, beta, theta) -> Mesh:
        """Posed mesh with face connectivity copied from the template."""
        return Mesh(self.forward_vertices(beta, theta).reshape(-1, 3), self.faces)

    # ------------------------------------------------------------- accounting

    def count_nonzero_params(self) -> ParameterCount:
        """Corrective parameters that survive the activation threshold.

        Counts every coefficient stored for a vertex with positive
        activation, plus the surviving activation weights themselves.
        The dense companion figure assumes every vertex is live, which
        is what an unpruned, fully-active model stores.
        """
        n = self.num_vertices
        nonzero = 0
        dense = 0
        for j in range(1, self.num_joints):
            block = self.correctives[j - 1]
            cols = 3 * block.feature_size
            live = self.activations[j - 1][block.vertex_ids] > 0.0
            nonzero += cols * int(np.count_nonzero(live))
            nonzero += int(np.count_nonzero(self.activations[j - 1] > 0.0))
            dense += cols * n + n
        return ParameterCount(nonzero=nonzero, dense=dense)

    def mean_support_size(self) -> float:
        sizes = [self.support_set(j).size for j in range(1, self.num_joints)]
        return float(np.mean(sizes))

    # -------------------------------------------------------------- jacobians

    def _subtree_masks(self) -> np.ndarray:
        """Boolean (K, K) matrix: row m marks m and all its descendants."""
        k = self.num_joints
        ancestors = np.zeros((k, k), dtype=bool)
        for j in range(k):
            ancestors[j, j] = True
            p = self.tree.parents[j]
            if p >= 0:
                ancestors[j] |= ancestors[p]
        return ancestors.T  # row m: joints whose ancestor set contains m

    def forward_jacobian(self, beta, theta) -> ForwardJacobian:
        """Analytic Jacobian of the posed vertices.

        Rows are vertex-major (x, y, z per vertex); pose columns are
        joint-major axis-angle components, shape columns cover the full
        shape space.  The corrective route keeps the model's sparse
        gradient structure: a vertex outside a joint's support receives
        exactly zero from that joint's corrective term.
        """
        full_beta = self._pad_beta(beta)
        theta = self._check_theta(theta)
        n, k = self.num_vertices, self.num_joints
        beta2 = self.beta2_of(full_beta)

        v_shaped = self.shaped_vertices(full_beta).reshape(n, 3)
        joints = self.joint_regressor @ v_shaped
        rotations = np.empty((k, 3, 3))
        rot_grads = np.empty((k, 3, 3, 3))
        for m in range(k):
            rotations[m], rot_grads[m] = axis_angle_to_matrix_jacobian(theta[3 * m : 3 * m + 3])
        world_rot, world_t = self._global_transforms(joints, rotations)

        features = self._features(theta, beta2)
        t_p = v_shaped.copy()
        for j in range(1, k):
            t_p += self._corrective_vertices(self.correctives[j - 1], j, features[j - 1])

        weights = self.skinning_weights
        skin_trans = world_t - np.einsum("kab,kb->ka", world_rot, joints)
        posed_parts = np.einsum("kab,nb->nka", world_rot, t_p) + skin_trans[None, :, :]
        blended_rot = np.einsum("nk,kab->nab", weights, world_rot)

        quat_jacs = []
        for m in range(k):
            _, jac = axis_angle_to_quaternion_jacobian(theta[3 * m : 3 * m + 3])
            quat_jacs.append(jac)

        subtree = self._subtree_masks()
        wrt_pose = np.zeros((3 * n, 3 * k))
        for m in range(k):
            mask = subtree[m]
            z = np.einsum("nk,nka->na", weights[:, mask], posed_parts[:, mask, :])
            ws = weights[:, mask].sum(axis=1)
            p = self.tree.parents[m]
            parent_rot = world_rot[p] if p >= 0 else np.eye(3)
            for c in range(3):
                # d(world transform of k)/d theta = E . (world transform of k)
                # with E = parent . [dR | 0] . world(m)^-1; E has a zero bottom
                # row, so its translation is -E_rot . world_t(m) with no parent
                # translation term.
                e_rot = parent_rot @ rot_grads[m, c] @ world_rot[m].T
                e_t = -e_rot @ world_t[m]
                col = z @ e_rot.T + ws[:, None] * e_t
                # Corrective route: joints whose neighborhood contains m.
                for j in range(1, k):
                    members = self.neighborhoods.of(j)
                    if m not in members:
                        continue
                    slot = members.index(m)
                    block = self.correctives[j - 1]
                    dfeat = quat_jacs[m][:, c]
                    raw = block.table[:, :, 4 * slot : 4 * slot + 4] @ dfeat
                    gate = np.maximum(self.activations[j - 1][block.vertex_ids], 0.0)
                    dtp = np.zeros((n, 3))
                    dtp[block.vertex_ids] = gate[:, None] * raw
                    col += np.einsum("nab,nb->na", blended_rot, dtp)
                wrt_pose[:, 3 * m + c] = col.ravel()

        corr_beta2 = np.zeros((n, 3))
        for j in range(1, k):
            block = self.correctives[j - 1]
            gate = np.maximum(self.activations[j - 1][block.vertex_ids], 0.0)
            corr_beta2[block.vertex_ids] += gate[:, None] * block.table[:, :, -1]

        wrt_shape = np.zeros((3 * n, self.num_shape_coeffs))
        for idx in range(self.num_shape_coeffs):
            d_shaped = self.shape_dirs[:, idx].reshape(n, 3)
            d_joints = self.joint_regressor @ d_shaped
            d_world_t = np.empty((k, 3))
            d_world_t[0] = d_joints[0]
            for j in range(1, k):
                p = self.tree.parents[j]
                d_world_t[j] = d_world_t[p] + world_rot[p] @ (d_joints[j] - d_joints[p])
            d_skin_trans = d_world_t - np.einsum("kab,kb->ka", world_rot, d_joints)
            d_tp = d_shaped if idx != self.beta2_index else d_shaped + corr_beta2
            col = np.einsum("nab,nb->na", blended_rot, d_tp) + weights @ d_skin_trans
            wrt_shape[:, idx] = col.ravel()

        return ForwardJacobian(wrt_pose=wrt_pose, wrt_shape=wrt_shape)

    # ------------------------------------------------------------- validation

    def check_invariants(self) -> list[tuple[str, bool, str]]:
        """Evaluate every model invariant; returns (name, passed, detail) rows."""
        checks = []
        row_sums = self.skinning_weights.sum(axis=1)
        checks.append(
            (
                "skinning rows are convex weights",
                bool(np.all(self.skinning_weights >= 0.0) and np.all(np.abs(row_sums - 1) <= 1e-9)),
                f"max row-sum deviation {np.abs(row_sums - 1).max():.2e}",
            )
        )
        reg_sums = self.joint_regressor.sum(axis=1)
        checks.append(
            (
                "joint regressor rows are convex weights",
                bool(np.all(self.joint_regressor >= 0.0) and np.all(np.abs(reg_sums - 1) <= 1e-9)),
                f"max row-sum deviation {np.abs(reg_sums - 1).max():.2e}",
            )
        )
        quat_norms = np.linalg.norm(self.tree.rest_quaternions, axis=1)
        checks.append(
            (
                "rest quaternions are unit",
                bool(np.all(np.abs(quat_norms - 1) <= 1e-12)),
                f"max norm deviation {np.abs(quat_norms - 1).max():.2e}",
            )
        )
        finite = all(
            np.all(np.isfinite(arr))
            for arr in (self.template, self.shape_dirs, self.activations, self.skinning_weights)
        ) and all(np.all(np.isfinite(b.table)) for b in self.correctives)
        checks.append(("all parameters finite", finite, ""))
        if self.pruned:
            dead_rows_zero = True
            for j in range(1, self.num_joints):
                block = self.correctives[j - 1]
                dead = self.activations[j - 1][block.vertex_ids] <= 0.0
                if np.any(block.table[dead] != 0.0):
                    dead_rows_zero = False
                    break
            checks.append(("pruned corrective rows of dead vertices are zero", dead_rows_zero, ""))
        try:
            self.template_mesh().validate_connected()
            checks.append(("template edge graph connected", True, ""))
        except Exception as exc:  # noqa: BLE001 - reported, not swallowed
            checks.append(("template edge graph connected", False, str(exc)))
        return checks

    def validate(self):
        """Raise :class:`ValidationError` if any invariant fails."""
        failures = [name for name, ok, _ in self.check_invariants() if not ok]
        if failures:
            raise ValidationError("model invariants violated: " + "; ".join(failures))

    def with_arrays(self, **overrides) -> "BodyModel":
        """Copy of this model with some parameter arrays replaced."""
        return replace(self, **overrides)
