"""Forward-model operations against naive oracles, plus structural invariants."""

import numpy as np
import pytest

import sparsebody as sb
from sparsebody.body import CorrectiveTable
from sparsebody.mesh import KinematicTree
from sparsebody.rotations import axis_angle_to_matrix, pose_to_feature

from conftest import build_tiny_model


def zero_correctives(model):
    zeroed = tuple(CorrectiveTable.dense(np.zeros_like(b.table)) for b in model.correctives)
    return model.with_arrays(correctives=zeroed)


def naive_pose_correctives(model, theta, beta2):
    """Dense per-joint oracle: plain loops, no masking shortcuts."""
    n = model.num_vertices
    out = np.zeros(3 * n)
    for j in range(1, model.num_joints):
        feature = pose_to_feature(theta, model.tree, model.neighborhoods, j, beta2)
        block = model.correctives[j - 1]
        dense = np.zeros((n, 3, block.feature_size))
        dense[block.vertex_ids] = block.table
        for i in range(n):
            gate = max(model.activations[j - 1][i], 0.0)
            for c in range(3):
                out[3 * i + c] += gate * float(dense[i, c] @ feature)
    return out


class TestShapeStage:
    def test_zero_beta_gives_zero_offsets(self, tiny_model):
        np.testing.assert_array_equal(tiny_model.shape_blend(np.zeros(4)), 0.0)

    def test_basis_vector_selects_column(self, tiny_model):
        offsets = tiny_model.shape_blend(np.array([1.0]))
        np.testing.assert_array_equal(offsets, tiny_model.shape_dirs[:, 0])

    def test_matches_triple_loop_accumulation(self, tiny_model):
        rng = np.random.default_rng(11)
        beta = rng.normal(size=4)
        expected = np.zeros(tiny_model.template.size)
        for coeff in range(4):
            for row in range(expected.size):
                expected[row] += beta[coeff] * tiny_model.shape_dirs[row, coeff]
        np.testing.assert_allclose(tiny_model.shape_blend(beta), expected, atol=1e-14)

    def test_too_many_coefficients_rejected(self, tiny_model):
        with pytest.raises(sb.InvalidArgumentError):
            tiny_model.shape_blend(np.zeros(5))

    def test_shaped_vertices_identity_and_linearity(self, tiny_model):
        np.testing.assert_array_equal(tiny_model.shaped_vertices(np.zeros(4)), tiny_model.template)
        rng = np.random.default_rng(12)
        b1, b2 = rng.normal(size=4), rng.normal(size=4)
        lhs = tiny_model.shaped_vertices(b1 + b2) - tiny_model.template
        rhs = (tiny_model.shaped_vertices(b1) - tiny_model.template) + (
            tiny_model.shaped_vertices(b2) - tiny_model.template
        )
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestJointRegression:
    def test_one_hot_row_returns_vertex(self, tiny_model):
        reg = np.zeros_like(tiny_model.joint_regressor)
        reg[:, 5] = 1.0
        model = tiny_model.with_arrays(joint_regressor=reg)
        joints = model.regress_joints(model.template).reshape(-1, 3)
        for row in joints:
            np.testing.assert_array_equal(row, model.template.reshape(-1, 3)[5])

    def test_uniform_row_returns_centroid(self, tiny_model):
        n = tiny_model.num_vertices
        reg = np.full_like(tiny_model.joint_regressor, 1.0 / n)
        model = tiny_model.with_arrays(joint_regressor=reg)
        joints = model.regress_joints(model.template).reshape(-1, 3)
        centroid = model.template.reshape(-1, 3).mean(axis=0)
        np.testing.assert_allclose(joints, np.tile(centroid, (model.num_joints, 1)), atol=1e-12)

    def test_matches_dense_loop_oracle(self, tiny_model):
        rng = np.random.default_rng(13)
        verts = rng.normal(size=tiny_model.template.size)
        joints = tiny_model.regress_joints(verts)
        v3 = verts.reshape(-1, 3)
        expected = np.zeros((tiny_model.num_joints, 3))
        for k in range(tiny_model.num_joints):
            for i in range(tiny_model.num_vertices):
                expected[k] += tiny_model.joint_regressor[k, i] * v3[i]
        np.testing.assert_allclose(joints, expected.ravel(), atol=1e-14)


class TestActivation:
    def test_negative_weight_clamps_to_zero(self, tiny_model):
        acts = tiny_model.activations.copy()
        acts[0, 0] = -0.3
        model = tiny_model.with_arrays(activations=acts)
        assert model.activation(1)[0] == 0.0

    def test_zero_weight_is_zero(self, tiny_model):
        acts = tiny_model.activations.copy()
        acts[0, 0] = 0.0
        model = tiny_model.with_arrays(activations=acts)
        assert model.activation(1)[0] == 0.0
        assert 0 not in model.support_set(1)

    def test_positive_weight_passes_through(self, tiny_model):
        acts = tiny_model.activations.copy()
        acts[0, 0] = 0.7
        model = tiny_model.with_arrays(activations=acts)
        assert model.activation(1)[0] == 0.7

    def test_root_has_no_activation(self, tiny_model):
        with pytest.raises(sb.InvalidArgumentError):
            tiny_model.activation(0)

    def test_all_nonpositive_support_is_empty(self, tiny_model):
        model = tiny_model.with_arrays(activations=-np.abs(tiny_model.activations))
        for j in range(1, model.num_joints):
            assert model.support_set(j).size == 0


class TestCorrectives:
    def test_rest_pose_zero_girth_is_zero(self, tiny_model):
        rest = tiny_model.rest_pose()
        np.testing.assert_array_equal(tiny_model.pose_correctives(rest, 0.0), 0.0)
        for j in range(1, tiny_model.num_joints):
            np.testing.assert_array_equal(tiny_model.pose_corrective_joint(rest, 0.0, j), 0.0)

    def test_masked_vertex_receives_bitwise_zero(self, tiny_model):
        acts = tiny_model.activations.copy()
        acts[0, 3] = -0.2
        model = tiny_model.with_arrays(activations=acts)
        rng = np.random.default_rng(14)
        for _ in range(10):
            theta = rng.uniform(-1.0, 1.0, 9)
            offs = model.pose_corrective_joint(theta, rng.normal(), 1)
            assert offs[9] == 0.0 and offs[10] == 0.0 and offs[11] == 0.0

    def test_single_joint_sum_reduces_to_that_joint(self, tiny_model):
        blocks = [CorrectiveTable.dense(np.zeros_like(b.table)) for b in tiny_model.correctives]
        blocks[1] = tiny_model.correctives[1]
        model = tiny_model.with_arrays(correctives=tuple(blocks))
        rng = np.random.default_rng(15)
        theta = rng.uniform(-0.8, 0.8, 9)
        np.testing.assert_array_equal(
            model.pose_correctives(theta, 0.3), model.pose_corrective_joint(theta, 0.3, 2)
        )

    def test_matches_naive_dense_oracle(self, tiny_model):
        rng = np.random.default_rng(16)
        for _ in range(5):
            theta = rng.uniform(-1.0, 1.0, 9)
            beta2 = rng.normal()
            np.testing.assert_allclose(
                tiny_model.pose_correctives(theta, beta2),
                naive_pose_correctives(tiny_model, theta, beta2),
                atol=1e-12,
            )

    def test_rest_pose_corrective_magnitude_diagnostic(self, tiny_model):
        """Non-zero girth coefficient leaks a rest-pose corrective by design."""
        assert tiny_model.rest_pose_corrective_magnitude(0.0) == 0.0
        assert tiny_model.rest_pose_corrective_magnitude(0.8) > 0.0


class TestPosedTemplate:
    def test_zero_everything_is_template(self, tiny_model):
        np.testing.assert_array_equal(
            tiny_model.posed_template(np.zeros(4), tiny_model.rest_pose()), tiny_model.template
        )

    def test_rest_pose_without_girth_is_shaped(self, tiny_model):
        beta = np.array([0.5, -0.4, 0.0, 0.2])
        assert tiny_model.beta2_index == 1
        beta_no_girth = beta.copy()
        beta_no_girth[1] = 0.0
        np.testing.assert_array_equal(
            tiny_model.posed_template(beta_no_girth, tiny_model.rest_pose()),
            tiny_model.shaped_vertices(beta_no_girth),
        )

    def test_additivity_of_the_two_terms(self, tiny_model):
        rng = np.random.default_rng(17)
        beta = rng.normal(size=4)
        theta = rng.uniform(-0.7, 0.7, 9)
        recomputed = tiny_model.shaped_vertices(beta) + tiny_model.pose_correctives(
            theta, float(beta[1])
        )
        np.testing.assert_allclose(tiny_model.posed_template(beta, theta), recomputed, atol=1e-15)


class TestSkinning:
    def test_rest_pose_is_identity(self, tiny_model):
        rng = np.random.default_rng(18)
        t_p = rng.normal(size=tiny_model.template.size)
        joints = tiny_model.regress_joints(tiny_model.template)
        out = tiny_model.lbs(t_p, joints, tiny_model.rest_pose())
        np.testing.assert_allclose(out, t_p, atol=1e-12)

    def test_one_hot_weights_rotate_rigidly_about_joint(self, tiny_model):
        """A vertex bound to one joint follows the closed-form rigid motion."""
        k = 2
        weights = np.zeros_like(tiny_model.skinning_weights)
        weights[:, k] = 1.0
        model = tiny_model.with_arrays(skinning_weights=weights)
        theta = model.rest_pose()
        theta[3 * k : 3 * k + 3] = [0.0, 0.0, 0.9]
        joints = model.regress_joints(model.template).reshape(-1, 3)
        out = model.lbs(model.template, joints.ravel(), theta).reshape(-1, 3)
        rot = axis_angle_to_matrix(theta[3 * k : 3 * k + 3])
        expected = (model.template.reshape(-1, 3) - joints[k]) @ rot.T + joints[k]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_root_rotation_is_global_rigid_motion(self, tiny_model):
        model = zero_correctives(tiny_model)
        theta = model.rest_pose()
        theta[0:3] = [0.3, -0.5, 0.8]
        joints = model.regress_joints(model.template).reshape(-1, 3)
        out = model.lbs(model.template, joints.ravel(), theta).reshape(-1, 3)
        rot = axis_angle_to_matrix(theta[0:3])
        expected = (model.template.reshape(-1, 3) - joints[0]) @ rot.T + joints[0]
        np.testing.assert_allclose(out, expected, atol=1e-12)


class TestForward:
    def test_zeros_give_template_mesh(self, tiny_model):
        mesh = tiny_model.forward(np.zeros(4), tiny_model.rest_pose())
        np.testing.assert_allclose(mesh.vertices.ravel(), tiny_model.template, atol=1e-12)
        np.testing.assert_array_equal(mesh.faces, tiny_model.faces)

    def test_rest_pose_shape_only_is_unskinned(self, tiny_model):
        beta = np.array([0.4, 0.0, -0.3, 0.1])  # girth slot zero
        out = tiny_model.forward_vertices(beta, tiny_model.rest_pose())
        np.testing.assert_allclose(out, tiny_model.shaped_vertices(beta), atol=1e-12)

    def test_root_rotation_rigidity(self, tiny_model):
        """With zero correctives a root pre-rotation rotates the whole output."""
        model = zero_correctives(tiny_model)
        rng = np.random.default_rng(19)
        theta = rng.uniform(-0.6, 0.6, 9)
        theta[0:3] = 0.0
        base = model.forward_vertices(np.zeros(4), theta).reshape(-1, 3)
        root = np.array([0.4, 0.7, -0.2])
        posed = theta.copy()
        posed[0:3] = root
        out = model.forward_vertices(np.zeros(4), posed).reshape(-1, 3)
        rot = axis_angle_to_matrix(root)
        joint0 = model.regress_joints(model.template).reshape(-1, 3)[0]
        expected = (base - joint0) @ rot.T + joint0
        np.testing.assert_allclose(out, expected, atol=1e-9)

    def test_full_scale_dimensional_contract(self):
        """24 joints mean 72 pose entries and 96 stacked quaternion entries;
        a 6890-vertex model poses without touching the corrective tables."""
        k, n = 24, 6890
        parents = np.zeros(k, dtype=np.int64)
        parents[0] = -1
        parents[1:] = np.arange(k - 1) // 2  # a bushy but valid tree
        tree = KinematicTree.identity_rest(parents)
        nbhd = sb.JointNeighborhoods.from_tree(tree)
        rng = np.random.default_rng(20)
        verts = rng.normal(size=(n, 3))
        faces = np.stack(
            [np.arange(n - 2), np.arange(1, n - 1), np.arange(2, n)], axis=1
        )
        regressor = np.zeros((k, n))
        regressor[:, :k] = np.eye(k)
        weights = rng.uniform(0.1, 1.0, (n, k))
        weights /= weights.sum(axis=1, keepdims=True)
        model = sb.BodyModel(
            template=verts.ravel(),
            shape_dirs=np.zeros((3 * n, 2)),
            joint_regressor=regressor,
            skinning_weights=weights,
            correctives=tuple(
                CorrectiveTable(np.zeros(0, dtype=np.int64), np.zeros((0, 3, nbhd.feature_length(j))))
                for j in range(1, k)
            ),
            activations=np.zeros((k - 1, n)),
            tree=tree,
            neighborhoods=nbhd,
            faces=faces,
        )
        theta = rng.uniform(-0.2, 0.2, 3 * k)
        assert theta.shape == (72,)
        from sparsebody.rotations import pose_quaternions

        assert pose_quaternions(theta).size == 96
        out = model.forward_vertices(np.zeros(2), theta)
        assert out.shape == (3 * n,)
        np.testing.assert_allclose(
            model.forward_vertices(np.zeros(2), model.rest_pose()), model.template, atol=1e-9
        )


class TestParameterCounting:
    def test_all_positive_activations_count_dense(self, tiny_model):
        model = tiny_model.with_arrays(activations=np.abs(tiny_model.activations) + 0.1)
        count = model.count_nonzero_params()
        assert count.nonzero == count.dense

    def test_all_zero_activations_count_zero(self, tiny_model):
        model = tiny_model.with_arrays(activations=np.zeros_like(tiny_model.activations))
        assert model.count_nonzero_params().nonzero == 0

    def test_pruned_model_matches_exhaustive_scan(self, small_body):
        """Counting agrees with an independent walk over the stored arrays."""
        model, _ = small_body
        pruned = sb.prune(model, threshold=0.0)
        count = pruned.count_nonzero_params()
        expected = 0
        for j in range(1, pruned.num_joints):
            block = pruned.correctives[j - 1]
            for row, vid in enumerate(block.vertex_ids):
                if pruned.activations[j - 1][vid] > 0.0:
                    expected += block.table[row].size
            expected += int((pruned.activations[j - 1] > 0.0).sum())
        assert count.nonzero == expected


class TestJacobian:
    def test_matches_finite_differences(self, tiny_model):
        rng = np.random.default_rng(21)
        h = 1e-5
        for _ in range(5):
            theta = rng.uniform(-0.8, 0.8, 9)
            beta = rng.uniform(-0.8, 0.8, 4)
            jac = tiny_model.forward_jacobian(beta, theta)
            for col in range(9):
                tp, tm = theta.copy(), theta.copy()
                tp[col] += h
                tm[col] -= h
                fd = (
                    tiny_model.forward_vertices(beta, tp) - tiny_model.forward_vertices(beta, tm)
                ) / (2 * h)
                scale = np.maximum(np.maximum(np.abs(fd), np.abs(jac.wrt_pose[:, col])), 1e-6)
                assert (np.abs(jac.wrt_pose[:, col] - fd) / scale).max() < 1e-4
            for col in range(4):
                bp, bm = beta.copy(), beta.copy()
                bp[col] += h
                bm[col] -= h
                fd = (
                    tiny_model.forward_vertices(bp, theta) - tiny_model.forward_vertices(bm, theta)
                ) / (2 * h)
                scale = np.maximum(np.maximum(np.abs(fd), np.abs(jac.wrt_shape[:, col])), 1e-6)
                assert (np.abs(jac.wrt_shape[:, col] - fd) / scale).max() < 1e-4

    def test_corrective_gradient_blocks_count(self, small_body):
        """Non-zero corrective gradient blocks are exactly sum_j |support| * |ne|.

        Ground-truth supports are disjoint geodesic balls, so no block is
        shared between joints and the identity holds with equality.
        """
        model, _ = small_body
        rng = np.random.default_rng(22)
        theta = rng.uniform(-0.5, 0.5, 3 * model.num_joints)
        h = 1e-6
        n, k = model.num_vertices, model.num_joints
        nonzero = np.zeros((n, k), dtype=bool)
        for m in range(k):
            for c in range(3):
                tp, tm = theta.copy(), theta.copy()
                tp[3 * m + c] += h
                tm[3 * m + c] -= h
                fd = (
                    model.pose_correctives(tp, 0.3) - model.pose_correctives(tm, 0.3)
                ).reshape(n, 3)
                nonzero[:, m] |= np.any(fd != 0.0, axis=1)
        expected = sum(
            model.support_set(j).size * len(model.neighborhoods.of(j)) for j in range(1, k)
        )
        assert int(nonzero.sum()) == expected

    def test_masked_vertices_have_zero_pose_gradient_blocks(self, small_body):
        """A vertex outside every support gets zero corrective gradient."""
        model, _ = small_body
        supports = [set(model.support_set(j).tolist()) for j in range(1, model.num_joints)]
        outside = [
            i for i in range(model.num_vertices) if all(i not in s for s in supports)
        ][:5]
        assert outside, "expected some fully unsupported vertices"
        rng = np.random.default_rng(23)
        theta = rng.uniform(-0.5, 0.5, 3 * model.num_joints)
        h = 1e-6
        for m in range(model.num_joints):
            tp, tm = theta.copy(), theta.copy()
            tp[3 * m] += h
            tm[3 * m] -= h
            fd = (model.pose_correctives(tp, 0.2) - model.pose_correctives(tm, 0.2)).reshape(-1, 3)
            for i in outside:
                np.testing.assert_array_equal(fd[i], 0.0)


class TestModelInvariants:
    def test_limb_lengths_preserved_under_pose(self, tiny_model):
        model = zero_correctives(tiny_model)
        rng = np.random.default_rng(24)
        rest_joints = model.regress_joints(model.template).reshape(-1, 3)
        for _ in range(20):
            theta = rng.uniform(-1.0, 1.0, 9)
            posed = model.posed_joints(np.zeros(4), theta).reshape(-1, 3)
            for j in range(1, model.num_joints):
                p = model.tree.parents[j]
                rest_len = np.linalg.norm(rest_joints[j] - rest_joints[p])
                posed_len = np.linalg.norm(posed[j] - posed[p])
                assert abs(rest_len - posed_len) < 1e-9

    def test_validate_passes_on_generated_models(self, small_body):
        model, _ = small_body
        model.validate()
        checks = model.check_invariants()
        assert all(ok for _, ok, _ in checks)

    def test_validate_catches_bad_skinning_rows(self, tiny_model):
        bad = tiny_model.skinning_weights.copy()
        bad[0] *= 1.5
        model = tiny_model.with_arrays(skinning_weights=bad)
        with pytest.raises(sb.ValidationError, match="skinning"):
            model.validate()

    def test_mask_exactness_on_random_draws(self):
        """Vertices outside a support set get bitwise-zero correctives."""
        model = build_tiny_model(seed=9)
        outside = {
            j: np.setdiff1d(np.arange(model.num_vertices), model.support_set(j))
            for j in range(1, model.num_joints)
        }
        rng = np.random.default_rng(25)
        for _ in range(50):
            theta = rng.uniform(-1.5, 1.5, 9)
            beta2 = rng.normal()
            for j in range(1, model.num_joints):
                offs = model.pose_corrective_joint(theta, beta2, j).reshape(-1, 3)
                np.testing.assert_array_equal(offs[outside[j]], 0.0)
