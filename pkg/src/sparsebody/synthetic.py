"""Procedural desk-scale bodies with known ground truth.

The generator builds an articulated tube: a chain of capsule-like
segments around a straight kinematic chain, with smooth skinning
weights, a handful of orthonormal shape modes (mode 1 scales girth, so
it plays the role of the mass-like coefficient), and ground-truth sparse
correctives whose support is an exact geodesic ball around each joint.

Everything is a pure function of (config, seed), so datasets and models
regenerate byte-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .body import BodyModel, CorrectiveTable
from .errors import InvalidArgumentError
from .mesh import JointNeighborhoods, KinematicTree, Mesh, geodesic_distances, joint_seed_vertices


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the procedural body generator."""

    num_joints: int = 8
    ring_resolution: int = 12  # vertices per cross-section ring
    segments_per_limb: int = 7  # rings between consecutive joints
    limb_length: float = 0.25
    base_radius: float = 0.08
    support_radius: float = 0.4  # geodesic corrective radius, fraction of limb length
    shape_modes: int = 8
    shape_scale: float = 0.25  # norm of the strongest shape direction
    corrective_scale: float = 0.01  # corrective entry scale, fraction of mean edge length
    noise_sigma: float = 0.0  # default registration noise
    seed: int = 0

    def __post_init__(self):
        if self.num_joints < 2:
            raise InvalidArgumentError("need at least 2 joints")
        if not 0.0 < self.support_radius <= 1.0:
            raise InvalidArgumentError("support_radius must be in (0, 1]")
        if self.ring_resolution < 3 or self.segments_per_limb < 1:
            raise InvalidArgumentError("ring_resolution >= 3 and segments_per_limb >= 1 required")
        if self.shape_modes < 1:
            raise InvalidArgumentError("need at least one shape mode")
        if self.num_vertices < 4 * self.num_joints:
            raise InvalidArgumentError(
                f"{self.num_vertices} vertices is too few for {self.num_joints} joints"
            )

    @property
    def num_rings(self) -> int:
        return (self.num_joints - 1) * self.segments_per_limb + 1

    @property
    def num_vertices(self) -> int:
        return self.num_rings * self.ring_resolution + 2  # rings plus two cap apices

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def _tube_mesh(cfg: SynthConfig) -> tuple[Mesh, np.ndarray]:
    """Capsule-chain mesh along +y; returns the mesh and per-vertex axial y."""
    rings = cfg.num_rings
    res = cfg.ring_resolution
    spacing = cfg.limb_length / cfg.segments_per_limb
    ys = np.arange(rings) * spacing
    # Pinch at the joints, bulge mid-limb, so segments read as capsules.
    local = (ys / cfg.limb_length) % 1.0
    radius = cfg.base_radius * (0.85 + 0.3 * np.sin(np.pi * local) ** 2)
    angles = 2.0 * np.pi * np.arange(res) / res
    verts = np.empty((rings * res + 2, 3))
    for r in range(rings):
        base = r * res
        verts[base : base + res, 0] = radius[r] * np.cos(angles)
        verts[base : base + res, 1] = ys[r]
        verts[base : base + res, 2] = radius[r] * np.sin(angles)
    bottom = rings * res
    top = bottom + 1
    verts[bottom] = (0.0, ys[0] - 0.5 * spacing, 0.0)
    verts[top] = (0.0, ys[-1] + 0.5 * spacing, 0.0)

    faces = []
    for r in range(rings - 1):
        for s in range(res):
            a = r * res + s
            b = r * res + (s + 1) % res
            c = (r + 1) * res + s
            d = (r + 1) * res + (s + 1) % res
            faces.append((a, b, c))
            faces.append((b, d, c))
    for s in range(res):
        faces.append((bottom, (s + 1) % res, s))
        faces.append((top, (rings - 1) * res + s, (rings - 1) * res + (s + 1) % res))
    mesh = Mesh(verts, np.array(faces, dtype=np.int64))
    axial = verts[:, 1].copy()
    return mesh, axial


def _shape_directions(cfg: SynthConfig, mesh: Mesh, axial: np.ndarray) -> np.ndarray:
    """Orthonormalized shape modes scaled by a decaying spectrum.

    Mode 0 stretches the body along its axis, mode 1 scales girth
    (radial push, the mass-like axis), higher modes modulate girth and
    length with increasing axial frequency.
    """
    n = mesh.num_vertices
    verts = mesh.vertices
    span = max(axial.max() - axial.min(), 1e-12)
    normalized_y = (axial - axial.min()) / span
    raw = np.zeros((3 * n, cfg.shape_modes))
    radial = np.zeros((n, 3))
    radial[:, 0] = verts[:, 0]
    radial[:, 2] = verts[:, 2]
    lengthwise = np.zeros((n, 3))
    lengthwise[:, 1] = axial - axial.mean()
    for m in range(cfg.shape_modes):
        if m == 0:
            direction = lengthwise
        elif m == 1:
            direction = radial
        elif m % 2 == 0:
            freq = m // 2
            direction = radial * np.cos(freq * np.pi * normalized_y)[:, None]
        else:
            freq = (m + 1) // 2
            direction = lengthwise * np.sin(freq * np.pi * normalized_y)[:, None]
        raw[:, m] = direction.ravel()
    q, _ = np.linalg.qr(raw)
    for m in range(cfg.shape_modes):
        if np.dot(q[:, m], raw[:, m]) < 0.0:
            q[:, m] = -q[:, m]
    scales = cfg.shape_scale * 0.8 ** np.arange(cfg.shape_modes)
    return q * scales


def make_body(cfg: SynthConfig) -> tuple[BodyModel, Mesh]:
    """Ground-truth model plus its template mesh.

    Corrective tables are drawn at random but supported only inside the
    configured geodesic radius of each joint; activations are positive
    inside that radius and non-positive outside, so the generated
    support sets are exact geodesic balls.
    """
    rng = np.random.default_rng(cfg.seed)
    mesh, axial = _tube_mesh(cfg)
    n = mesh.num_vertices
    k = cfg.num_joints

    tree = KinematicTree.identity_rest(np.arange(k) - 1)
    nbhd = JointNeighborhoods.from_tree(tree)

    regressor = np.zeros((k, n))
    for j in range(k):
        ring = j * cfg.segments_per_limb
        ids = np.arange(ring * cfg.ring_resolution, (ring + 1) * cfg.ring_resolution)
        regressor[j, ids] = 1.0 / cfg.ring_resolution

    joint_y = np.arange(k) * cfg.limb_length
    falloff = 0.6 * cfg.limb_length
    weights = np.exp(-((axial[:, None] - joint_y[None, :]) / falloff) ** 2)
    weights /= weights.sum(axis=1, keepdims=True)

    shape_dirs = _shape_directions(cfg, mesh, axial)

    seeds = joint_seed_vertices(mesh, regressor)
    radius = cfg.support_radius * cfg.limb_length
    entry_scale = cfg.corrective_scale * mesh.mean_edge_length()
    activations = np.empty((k - 1, n))
    correctives = []
    for j in range(1, k):
        dist = geodesic_distances(mesh, seeds[j])
        activations[j - 1] = 1.0 - (dist / radius) ** 4
        support = np.flatnonzero(dist < radius)
        table = np.zeros((n, 3, nbhd.feature_length(j)))
        table[support] = rng.normal(0.0, entry_scale, size=(support.size, 3, nbhd.feature_length(j)))
        correctives.append(CorrectiveTable.dense(table))

    model = BodyModel(
        template=mesh.vertices.ravel().copy(),
        shape_dirs=shape_dirs,
        joint_regressor=regressor,
        skinning_weights=weights,
        correctives=tuple(correctives),
        activations=activations,
        tree=tree,
        neighborhoods=nbhd,
        faces=mesh.faces.copy(),
    )
    return model, mesh


def sample_registrations(
    model: BodyModel,
    count: int,
    pose_range: float = 0.3,
    shape_range: float = 1.0,
    noise_sigma: float = 0.0,
    seed: int = 0,
):
    """Registrations posed by the model itself plus i.i.d. Gaussian noise.

    Poses and shapes are drawn uniformly in symmetric ranges and stored
    with each registration, so recovery experiments know the truth.
    """
    from .training import Registration

    if count < 1:
        raise InvalidArgumentError("count must be >= 1")
    rng = np.random.default_rng(seed)
    registrations = []
    for _ in range(count):
        theta = rng.uniform(-pose_range, pose_range, 3 * model.num_joints)
        beta = rng.uniform(-shape_range, shape_range, model.num_shape_coeffs)
        verts = model.forward_vertices(beta, theta)
        if noise_sigma > 0.0:
            verts = verts + rng.normal(0.0, noise_sigma, verts.shape)
        registrations.append(Registration(vertices=verts, pose=theta, shape=beta))
    return registrations


def make_shape_populations(
    model: BodyModel,
    count: int = 40,
    seed: int = 0,
    stddev_a=None,
    stddev_b=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Two subject populations with different dominant shape modes.

    Coefficients are zero-mean Gaussians pushed through the shape space.
    The default spreads make modes 0 and 2 dominate population A and
    modes 1 and 3 dominate population B, with small decaying spreads on
    every other mode so both populations are full rank.
    """
    if count < 2:
        raise InvalidArgumentError("need at least 2 subjects per population")
    nb = model.num_shape_coeffs
    if stddev_a is None or stddev_b is None:
        if nb < 4:
            raise InvalidArgumentError("default populations need at least 4 shape modes")
        base = 0.08 * 0.9 ** np.arange(nb)
        default_a = base.copy()
        default_a[0], default_a[2] = 1.0, 0.7
        default_b = base[::-1].copy()
        default_b[1], default_b[3] = 1.0, 0.7
        stddev_a = default_a if stddev_a is None else np.asarray(stddev_a, dtype=np.float64)
        stddev_b = default_b if stddev_b is None else np.asarray(stddev_b, dtype=np.float64)
    stddev_a = np.asarray(stddev_a, dtype=np.float64)
    stddev_b = np.asarray(stddev_b, dtype=np.float64)
    if stddev_a.shape != (nb,) or stddev_b.shape != (nb,):
        raise InvalidArgumentError(f"population spreads must have length {nb}")
    rng = np.random.default_rng(seed)

    def draw(stddev):
        rows = np.empty((count, 3 * model.num_vertices))
        for i in range(count):
            beta = rng.normal(0.0, 1.0, nb) * stddev
            rows[i] = model.shaped_vertices(beta)
        return rows

    return draw(stddev_a), draw(stddev_b)


def reference_config() -> SynthConfig:
    """The frozen configuration used by the end-to-end recovery experiments."""
    return SynthConfig(
        num_joints=8,
        ring_resolution=12,
        segments_per_limb=7,
        support_radius=0.4,
        shape_modes=8,
        corrective_scale=0.1,
        noise_sigma=1e-4,
        seed=20240,
    )
