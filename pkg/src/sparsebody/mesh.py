"""Triangle-mesh and kinematic-tree primitives.

Everything downstream (the body model, training, the synthetic data
pipeline) builds on the three types defined here: :class:`Mesh`,
:class:`KinematicTree` and :class:`JointNeighborhoods`, plus edge-graph
geodesic distances and Wavefront OBJ file I/O.

All types are immutable after construction and all functions are pure,
so they are safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import InvalidArgumentError, ObjParseError, UnreachableVertexError, ValidationError

OBJ_DECIMALS = 6


@dataclass(frozen=True)
class Mesh:
    """A triangle mesh: vertex positions plus face connectivity.

    Vertices are interpreted as model units (meters for a life-size
    body).  Construction validates face indices and rejects degenerate
    faces.  Connectivity of the edge graph is required by the geodesic
    machinery but is only checked on demand (``validate_connected``),
    so partially-built meshes can still be inspected.
    """

    vertices: np.ndarray  # (N, 3) float64
    faces: np.ndarray  # (F, 3) int64

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64)
        faces = np.asarray(self.faces, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise ValidationError(f"vertices must be (N, 3), got {verts.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValidationError(f"faces must be (F, 3), got {faces.shape}")
        if faces.size and (faces.min() < 0 or faces.max() >= len(verts)):
            bad = faces[(faces < 0) | (faces >= len(verts))][0]
            raise ValidationError(f"face index {bad} out of range for {len(verts)} vertices")
        for tri in faces:
            if len(set(tri.tolist())) != 3:
                raise ValidationError(f"degenerate face {tri.tolist()}")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (E, 2) array with e[0] < e[1]."""
        pairs = np.concatenate(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
        )
        pairs = np.sort(pairs, axis=1)
        return np.unique(pairs, axis=0)

    def edge_lengths(self, edges: np.ndarray | None = None) -> np.ndarray:
        if edges is None:
            edges = self.edges()
        delta = self.vertices[edges[:, 0]] - self.vertices[edges[:, 1]]
        return np.linalg.norm(delta, axis=1)

    def mean_edge_length(self) -> float:
        return float(self.edge_lengths().mean())

    def bounding_box_diagonal(self) -> float:
        extent = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(extent))

    def is_connected(self) -> bool:
        dist = _edge_graph_distances(self, np.array([0]))
        return bool(np.all(np.isfinite(dist)))

    def validate_connected(self):
        dist = _edge_graph_distances(self, np.array([0]))
        unreachable = np.flatnonzero(~np.isfinite(dist))
        if unreachable.size:
            raise UnreachableVertexError(int(unreachable[0]))


@dataclass(frozen=True)
class KinematicTree:
    """Joint hierarchy: parent indices, labels and rest-pose quaternions.

    Joint 0 is the root (parent sentinel -1) and every other joint's
    parent has a smaller index, i.e. the array is topologically ordered.
    """

    parents: np.ndarray  # (K,) int64, parents[0] == -1
    names: tuple[str, ...]
    rest_quaternions: np.ndarray  # (K, 4) float64, unit norm, (w, x, y, z)

    def __post_init__(self):
        parents = np.asarray(self.parents, dtype=np.int64)
        quats = np.asarray(self.rest_quaternions, dtype=np.float64)
        k = len(parents)
        if k < 1 or parents[0] != -1:
            raise ValidationError("joint 0 must be the root (parent -1)")
        if np.any(parents[1:] < 0) or np.any(parents[1:] >= np.arange(1, k)):
            raise ValidationError("parents must satisfy parent[j] < j for j > 0")
        if len(self.names) != k:
            raise ValidationError("names length must match parents length")
        if quats.shape != (k, 4):
            raise ValidationError(f"rest_quaternions must be ({k}, 4)")
        norms = np.linalg.norm(quats, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValidationError("rest quaternions must have unit norm within 1e-12")
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "rest_quaternions", quats)

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    def children(self, j: int) -> list[int]:
        return [int(c) for c in np.flatnonzero(self.parents == j)]

    @staticmethod
    def identity_rest(parents, names=None) -> "KinematicTree":
        """Tree whose rest pose is the identity rotation at every joint."""
        parents = np.asarray(parents, dtype=np.int64)
        k = len(parents)
        if names is None:
            names = tuple(f"joint{j}" for j in range(k))
        quats = np.zeros((k, 4))
        quats[:, 0] = 1.0
        return KinematicTree(parents, tuple(names), quats)


@dataclass(frozen=True)
class JointNeighborhoods:
    """Ordered neighbor sets ne(j) for every non-root joint.

    ne(j) lists j itself first, then its parent, then its children in
    ascending index order.  The ordering is part of the contract: pose
    feature vectors are laid out in this order, so it must be stable.
    """

    members: tuple[tuple[int, ...], ...] = field()  # index j-1 holds ne(j)

    @staticmethod
    def from_tree(tree: KinematicTree) -> "JointNeighborhoods":
        members = []
        for j in range(1, tree.num_joints):
            ne = [j, int(tree.parents[j])] + tree.children(j)
            members.append(tuple(ne))
        return JointNeighborhoods(tuple(members))

    def of(self, j: int) -> tuple[int, ...]:
        if j < 1 or j > len(self.members):
            raise InvalidArgumentError(f"joint {j} has no neighborhood (root or out of range)")
        return self.members[j - 1]

    def feature_length(self, j: int) -> int:
        return 4 * len(self.of(j)) + 1


def _edge_graph_distances(mesh: Mesh, seeds: np.ndarray) -> np.ndarray:
    edges = mesh.edges()
    lengths = mesh.edge_lengths(edges)
    n = mesh.num_vertices
    row = np.concatenate([edges[:, 0], edges[:, 1]])
    col = np.concatenate([edges[:, 1], edges[:, 0]])
    dat = np.concatenate([lengths, lengths])
    graph = coo_matrix((dat, (row, col)), shape=(n, n)).tocsr()
    return dijkstra(graph, directed=False, indices=seeds, min_only=True)


def geodesic_distances(mesh: Mesh, seeds) -> np.ndarray:
    """Shortest-path distance along mesh edges to the nearest seed vertex.

    Edge weights are Euclidean edge lengths; seed vertices map to zero.
    Raises if the seed set is empty or some vertex cannot be reached.
    """
    seeds = np.asarray(sorted(set(int(s) for s in np.atleast_1d(seeds))), dtype=np.int64)
    if seeds.size == 0:
        raise InvalidArgumentError("seed set must be non-empty")
    if seeds.min() < 0 or seeds.max() >= mesh.num_vertices:
        raise InvalidArgumentError(f"seed index out of range for {mesh.num_vertices} vertices")
    dist = _edge_graph_distances(mesh, seeds)
    unreachable = np.flatnonzero(~np.isfinite(dist))
    if unreachable.size:
        raise UnreachableVertexError(int(unreachable[0]))
    return dist


def joint_seed_vertices(mesh: Mesh, joint_regressor: np.ndarray, fallback_count: int = 8) -> list[np.ndarray]:
    """Per-joint geodesic seed sets.

    A joint's seeds are the vertices its regressor row touches.  When a
    row is all zero the fallback takes the ``fallback_count`` vertices
    nearest (Euclidean) to the location the row regresses, which for a
    zero row is the origin.  Distance ties break toward the lower vertex
    index so seed sets are reproducible.
    """
    reg = np.asarray(joint_regressor, dtype=np.float64)
    if reg.ndim != 2 or reg.shape[1] != mesh.num_vertices:
        raise InvalidArgumentError(
            f"joint regressor must be (K, {mesh.num_vertices}), got {reg.shape}"
        )
    if fallback_count < 1:
        raise InvalidArgumentError("fallback_count must be >= 1")
    seeds = []
    for k in range(reg.shape[0]):
        support = np.flatnonzero(reg[k] != 0.0)
        if support.size == 0:
            location = reg[k] @ mesh.vertices
            dist = np.linalg.norm(mesh.vertices - location, axis=1)
            m = min(fallback_count, mesh.num_vertices)
            support = np.sort(np.argsort(dist, kind="stable")[:m])
        if support.size == 0:
            raise ValidationError(f"joint {k} has no candidate seed vertices")
        seeds.append(support.astype(np.int64))
    return seeds


def load_obj(path) -> Mesh:
    """Parse a Wavefront OBJ file (``v`` and ``f`` records only).

    Face records may carry ``/vt`` and ``/vn`` suffixes, which are
    ignored.  Any record that does not parse raises
    :class:`ObjParseError` with its line number; face indices are
    validated against the vertex count.
    """
    vertices = []
    faces = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ObjParseError(lineno, f"vertex record needs 3 coordinates: {line!r}")
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise ObjParseError(lineno, f"non-numeric vertex coordinate: {line!r}")
            elif tag == "f":
                if len(parts) != 4:
                    raise ObjParseError(lineno, f"only triangle faces are supported: {line!r}")
                idx = []
                for token in parts[1:]:
                    head = token.split("/")[0]
                    try:
                        value = int(head)
                    except ValueError:
                        raise ObjParseError(lineno, f"non-integer face index: {token!r}")
                    if value == 0:
                        raise ObjParseError(lineno, "OBJ face indices are 1-based, got 0")
                    # Negative indices are relative to the current vertex count.
                    idx.append(value - 1 if value > 0 else len(vertices) + value)
                if any(i < 0 or i >= len(vertices) for i in idx):
                    raise ValidationError(
                        f"line {lineno}: face index out of range for {len(vertices)} vertices"
                    )
                faces.append(idx)
            else:
                # vn / vt / s / o / g / mtllib / usemtl and friends are ignored.
                continue
    if not vertices:
        raise ValidationError(f"no vertices found in {path}")
    return Mesh(np.array(vertices, dtype=np.float64), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh: Mesh, path):
    """Write a mesh as ASCII OBJ with 6-decimal vertex precision."""
    with open(path, "w", encoding="utf-8") as handle:
        for v in mesh.vertices:
            handle.write(f"v {v[0]:.{OBJ_DECIMALS}f} {v[1]:.{OBJ_DECIMALS}f} {v[2]:.{OBJ_DECIMALS}f}\n")
        for f in mesh.faces:
            handle.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
