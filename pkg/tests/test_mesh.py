"""Mesh primitives: OBJ round trips, geodesic distances, seed selection."""

import numpy as np
import pytest

from sparsebody.errors import (
    InvalidArgumentError,
    ObjParseError,
    UnreachableVertexError,
    ValidationError,
)
from sparsebody.mesh import (
    JointNeighborhoods,
    KinematicTree,
    Mesh,
    geodesic_distances,
    joint_seed_vertices,
    load_obj,
    save_obj,
)

TET_VERTS = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
TET_FACES = np.array([[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]])


def grid_mesh(side: int) -> Mesh:
    """side x side vertex grid in the plane, each cell split into two triangles."""
    xs, ys = np.meshgrid(np.arange(side, dtype=float), np.arange(side, dtype=float))
    verts = np.stack([xs.ravel(), ys.ravel(), np.zeros(side * side)], axis=1)
    faces = []
    for r in range(side - 1):
        for c in range(side - 1):
            a = r * side + c
            b = a + 1
            d = a + side
            e = d + 1
            faces.append((a, b, d))
            faces.append((b, e, d))
    return Mesh(verts, np.asarray(faces))


def all_simple_path_distances(mesh: Mesh, seeds) -> np.ndarray:
    """Brute-force oracle: enumerate simple paths from the seeds, keep the minimum.

    No priority queue, no Dijkstra; depth-first over simple paths with
    the only concession being that provably-worse prefixes stop early
    (which cannot change the minimum).
    """
    n = mesh.num_vertices
    adjacency = [[] for _ in range(n)]
    for (u, v), length in zip(mesh.edges(), mesh.edge_lengths()):
        adjacency[u].append((int(v), float(length)))
        adjacency[v].append((int(u), float(length)))
    best = np.full(n, np.inf)
    for s in seeds:
        best[s] = 0.0

    def walk(vertex, dist, visited):
        for nxt, length in adjacency[vertex]:
            if nxt in visited:
                continue
            cand = dist + length
            if cand >= best[nxt] and cand != 0.0:
                if cand > best[nxt]:
                    continue
            best[nxt] = min(best[nxt], cand)
            visited.add(nxt)
            walk(nxt, cand, visited)
            visited.remove(nxt)

    for s in seeds:
        walk(s, 0.0, {s})
    return best


class TestMeshValidation:
    def test_face_index_out_of_range_rejected(self):
        with pytest.raises(ValidationError, match="out of range"):
            Mesh(TET_VERTS, np.array([[0, 1, 7]]))

    def test_degenerate_face_rejected(self):
        with pytest.raises(ValidationError, match="degenerate"):
            Mesh(TET_VERTS, np.array([[0, 1, 1]]))

    def test_connectivity_check(self):
        mesh = Mesh(np.vstack([TET_VERTS, TET_VERTS + 10.0]), np.vstack([TET_FACES, TET_FACES + 4]))
        assert not mesh.is_connected()
        with pytest.raises(UnreachableVertexError):
            mesh.validate_connected()
        assert grid_mesh(3).is_connected()


class TestObjIO:
    def test_tetrahedron_round_trip(self, tmp_path):
        """Save then load reproduces the 4 vertices and 4 faces exactly."""
        mesh = Mesh(TET_VERTS, TET_FACES)
        path = tmp_path / "tet.obj"
        save_obj(mesh, path)
        loaded = load_obj(path)
        np.testing.assert_array_equal(loaded.vertices, mesh.vertices)
        np.testing.assert_array_equal(loaded.faces, mesh.faces)

    def test_slash_suffixes_ignored(self, tmp_path):
        path = tmp_path / "m.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/2 3/3/3\n")
        mesh = load_obj(path)
        np.testing.assert_array_equal(mesh.faces, [[0, 1, 2]])

    def test_face_index_out_of_range(self, tmp_path):
        path = tmp_path / "m.obj"
        path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 1 2 99\n")
        with pytest.raises(ValidationError, match="out of range"):
            load_obj(path)

    def test_malformed_record_reports_line(self, tmp_path):
        path = tmp_path / "m.obj"
        path.write_text("v 0 0 0\nv 1 0 zzz\n")
        with pytest.raises(ObjParseError, match="line 2"):
            load_obj(path)

    def test_round_trip_precision_and_idempotence(self, tmp_path):
        """Vertices survive to 6 decimals and a second cycle changes nothing."""
        rng = np.random.default_rng(5)
        mesh = Mesh(TET_VERTS + rng.uniform(-1, 1, TET_VERTS.shape) * 0.123456789, TET_FACES)
        first = tmp_path / "a.obj"
        save_obj(mesh, first)
        once = load_obj(first)
        np.testing.assert_allclose(once.vertices, mesh.vertices, atol=5e-7)
        second = tmp_path / "b.obj"
        save_obj(once, second)
        assert first.read_text() == second.read_text()
        twice = load_obj(second)
        np.testing.assert_array_equal(twice.vertices, once.vertices)

    def test_comments_and_other_records_skipped(self, tmp_path):
        path = tmp_path / "m.obj"
        path.write_text("# comment\no thing\nvn 0 0 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\ns off\nf 1 2 3\n")
        assert load_obj(path).num_vertices == 3


class TestGeodesics:
    def test_seed_distance_is_zero(self):
        dist = geodesic_distances(grid_mesh(3), [4])
        assert dist[4] == 0.0

    def test_single_edge_distance(self):
        """One edge of known length: the other endpoint sits exactly that far."""
        verts = np.array([[0.0, 0.0, 0.0], [3.0, 4.0, 0.0], [0.0, 4.0, 0.0]])
        mesh = Mesh(verts, np.array([[0, 1, 2]]))
        dist = geodesic_distances(mesh, [0])
        assert dist[1] == pytest.approx(5.0, abs=1e-12)

    def test_grid_matches_simple_path_enumeration(self):
        """4x4 grid from a corner seed agrees with the brute-force oracle."""
        mesh = grid_mesh(4)
        dist = geodesic_distances(mesh, [0])
        oracle = all_simple_path_distances(mesh, [0])
        np.testing.assert_allclose(dist, oracle, atol=1e-12)

    def test_multi_seed_matches_enumeration(self):
        mesh = grid_mesh(4)
        seeds = [3, 12]
        np.testing.assert_allclose(
            geodesic_distances(mesh, seeds), all_simple_path_distances(mesh, seeds), atol=1e-12
        )

    def test_triangle_inequality_along_edges(self):
        """|d(u) - d(v)| never exceeds the connecting edge length."""
        mesh = grid_mesh(5)
        dist = geodesic_distances(mesh, [7])
        lengths = mesh.edge_lengths()
        for (u, v), length in zip(mesh.edges(), lengths):
            assert abs(dist[u] - dist[v]) <= length + 1e-12

    def test_adding_seeds_never_increases_distance(self):
        mesh = grid_mesh(5)
        base = geodesic_distances(mesh, [0])
        grown = geodesic_distances(mesh, [0, 24])
        assert np.all(grown <= base + 1e-12)

    def test_empty_seed_set_rejected(self):
        with pytest.raises(InvalidArgumentError):
            geodesic_distances(grid_mesh(3), [])

    def test_unreachable_vertex_named(self):
        mesh = Mesh(np.vstack([TET_VERTS, TET_VERTS + 9]), np.vstack([TET_FACES, TET_FACES + 4]))
        with pytest.raises(UnreachableVertexError, match="vertex 4"):
            geodesic_distances(mesh, [0])


class TestJointSeeds:
    def test_regressor_support_defines_seeds(self):
        mesh = grid_mesh(3)
        reg = np.zeros((1, mesh.num_vertices))
        reg[0, 3] = 0.4
        reg[0, 7] = 0.6
        np.testing.assert_array_equal(joint_seed_vertices(mesh, reg)[0], [3, 7])

    def test_zero_row_falls_back_to_nearest(self):
        """With m=1 the fallback picks the single vertex nearest the regressed point."""
        mesh = grid_mesh(3)
        reg = np.zeros((1, mesh.num_vertices))
        seeds = joint_seed_vertices(mesh, reg, fallback_count=1)[0]
        target = np.zeros(3)  # a zero row regresses the origin
        nearest = int(np.argmin(np.linalg.norm(mesh.vertices - target, axis=1)))
        np.testing.assert_array_equal(seeds, [nearest])

    def test_fallback_matches_exhaustive_nearest_scan(self, small_body):
        """Fallback seeds equal a brute-force m-nearest search on a real body.

        A zeroed row regresses the origin, so that is the point the
        exhaustive scan must measure from as well.
        """
        model, mesh = small_body
        joint = 2
        reg = model.joint_regressor.copy()
        reg[joint] = 0.0
        location = reg[joint] @ mesh.vertices
        m = 8
        seeds = joint_seed_vertices(mesh, reg, fallback_count=m)[joint]
        dist = np.linalg.norm(mesh.vertices - location, axis=1)
        by_distance_then_index = sorted(range(mesh.num_vertices), key=lambda i: (dist[i], i))
        brute = np.sort(by_distance_then_index[:m])
        np.testing.assert_array_equal(seeds, brute)

    def test_bad_fallback_count(self):
        with pytest.raises(InvalidArgumentError):
            joint_seed_vertices(grid_mesh(3), np.zeros((1, 9)), fallback_count=0)


class TestKinematicTree:
    def test_root_must_be_first(self):
        with pytest.raises(ValidationError):
            KinematicTree.identity_rest([0, -1])

    def test_parent_ordering_enforced(self):
        with pytest.raises(ValidationError):
            KinematicTree.identity_rest([-1, 2, 1])

    def test_rest_quaternions_must_be_unit(self):
        quats = np.zeros((2, 4))
        quats[:, 0] = 1.0
        quats[1, 0] = 1.0 + 1e-6
        with pytest.raises(ValidationError, match="unit norm"):
            KinematicTree(np.array([-1, 0]), ("root", "a"), quats)

    def test_neighborhood_order_is_self_parent_children(self):
        """ne(j) lists j, then the parent, then children ascending."""
        tree = KinematicTree.identity_rest([-1, 0, 1, 1, 1])
        nbhd = JointNeighborhoods.from_tree(tree)
        assert nbhd.of(1) == (1, 0, 2, 3, 4)
        assert nbhd.of(3) == (3, 1)
        with pytest.raises(InvalidArgumentError):
            nbhd.of(0)
