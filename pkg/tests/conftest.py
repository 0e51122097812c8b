"""Shared fixtures: hand-built tiny models and the frozen reference run."""

import numpy as np
import pytest

import sparsebody as sb
from sparsebody.body import BodyModel, CorrectiveTable
from sparsebody.mesh import JointNeighborhoods, KinematicTree, Mesh


def build_tiny_model(seed: int = 0, chain: int = 3) -> BodyModel:
    """A 12-vertex, 3-joint chain model with random but valid parameters.

    Three rings of four vertices around a vertical chain; small enough
    that dense oracles and full finite-difference sweeps stay cheap.
    """
    rng = np.random.default_rng(seed)
    rings, res = chain, 4
    verts = np.empty((rings * res, 3))
    for r in range(rings):
        for s in range(res):
            angle = 2 * np.pi * s / res
            verts[r * res + s] = (0.2 * np.cos(angle), 0.5 * r, 0.2 * np.sin(angle))
    faces = []
    for r in range(rings - 1):
        for s in range(res):
            a, b = r * res + s, r * res + (s + 1) % res
            c, d = (r + 1) * res + s, (r + 1) * res + (s + 1) % res
            faces.append((a, b, c))
            faces.append((b, d, c))
    mesh = Mesh(verts, np.asarray(faces))

    tree = KinematicTree.identity_rest(np.arange(chain) - 1)
    nbhd = JointNeighborhoods.from_tree(tree)
    n = mesh.num_vertices

    regressor = np.zeros((chain, n))
    for j in range(chain):
        regressor[j, j * res : (j + 1) * res] = 1.0 / res

    joint_y = 0.5 * np.arange(chain)
    weights = np.exp(-(((verts[:, 1, None] - joint_y[None, :]) / 0.35) ** 2))
    weights /= weights.sum(axis=1, keepdims=True)

    num_modes = 4
    raw = rng.normal(size=(3 * n, num_modes))
    q, _ = np.linalg.qr(raw)
    shape_dirs = q * 0.1

    activations = rng.uniform(-1.0, 1.0, (chain - 1, n))
    activations[np.abs(activations) < 5e-2] = 0.5  # keep clear of the ReLU kink
    correctives = tuple(
        CorrectiveTable.dense(rng.normal(0.0, 0.01, (n, 3, nbhd.feature_length(j))))
        for j in range(1, chain)
    )
    return BodyModel(
        template=verts.ravel().copy(),
        shape_dirs=shape_dirs,
        joint_regressor=regressor,
        skinning_weights=weights,
        correctives=correctives,
        activations=activations,
        tree=tree,
        neighborhoods=nbhd,
        faces=mesh.faces.copy(),
    )


@pytest.fixture(scope="session")
def tiny_model() -> BodyModel:
    return build_tiny_model(seed=0)


@pytest.fixture(scope="session")
def small_body():
    """A small but non-trivial synthetic ground-truth body and its mesh."""
    cfg = sb.SynthConfig(num_joints=4, ring_resolution=8, segments_per_limb=3, shape_modes=4, seed=3)
    return sb.make_body(cfg)


@pytest.fixture(scope="session")
def reference_body():
    """The frozen reference ground-truth body used by the acceptance suite."""
    return sb.make_body(sb.synthetic.reference_config())


@pytest.fixture(scope="session")
def reference_training_run(reference_body):
    """Train the reference trainee once; several acceptance criteria share it."""
    from sparsebody.training import reference_train_config, train

    gt, _ = reference_body
    data = sb.sample_registrations(
        gt, 200, pose_range=0.3, shape_range=1.0, noise_sigma=1e-4, seed=7
    )
    trained, metrics = train(gt, data, reference_train_config())
    return gt, trained, metrics, data
