import json
import struct

import numpy as np
import pytest

from geolift import io
from geolift.geodesic import GeodesicMatrix, all_pairs_geodesics, build_graph
from geolift.geometry import PointCloud, gen_shape
from geolift.meshing import TriangleMesh
from geolift.network import init_network


@pytest.fixture
def cube():
    return gen_shape("cube", n=200, seed=0)


# --- point clouds --------------------------------------------------------------


@pytest.mark.parametrize("with_normals, with_labels", [(False, False), (True, False), (False, True), (True, True)])
def test_xyz_round_trip_is_exact(tmp_path, cube, with_normals, with_labels):
    cloud = PointCloud(cube.points, cube.normals if with_normals else None, cube.labels if with_labels else None)
    a, b = tmp_path / "a.xyz", tmp_path / "b.xyz"
    io.write_xyz(a, cloud)
    back = io.read_xyz(a)
    assert np.array_equal(back.points, cloud.points)
    assert (back.normals is None) == (not with_normals)
    assert (back.labels is None) == (not with_labels)
    io.write_xyz(b, back)
    assert a.read_bytes() == b.read_bytes()


def test_xyz_extra_column_replaces_labels(tmp_path, cube):
    io.write_xyz(tmp_path / "c.xyz", cube, extra=np.arange(len(cube)) % 3)
    assert io.read_xyz(tmp_path / "c.xyz").labels.tolist()[:4] == [0, 1, 2, 0]


def test_xyz_rejects_ragged_rows(tmp_path):
    (tmp_path / "bad.xyz").write_text("0 0 0\n1 1\n")
    with pytest.raises(io.FormatError):
        io.read_xyz(tmp_path / "bad.xyz")


def test_ply_round_trip(tmp_path, cube):
    a, b = tmp_path / "a.ply", tmp_path / "b.ply"
    chart = np.arange(len(cube)) % 6
    io.write_ply(a, cube, chart=chart)
    back, back_chart = io.read_ply(a, return_chart=True)
    assert np.array_equal(back.points, cube.points.astype(np.float32).astype(float))
    assert np.array_equal(back.labels, cube.labels) and np.array_equal(back_chart, chart)
    assert np.allclose(back.normals, cube.normals, atol=1e-7)
    io.write_ply(b, back, chart=back_chart)
    assert a.read_bytes() == b.read_bytes()


def test_ply_header_declares_properties(tmp_path, cube):
    io.write_ply(tmp_path / "c.ply", cube, chart=np.zeros(len(cube), int))
    header = (tmp_path / "c.ply").read_bytes().split(b"end_header")[0].decode()
    for name in ("float x", "float nz", "int label", "int chart", "element vertex 200"):
        assert name in header


def test_ply_rejects_ascii(tmp_path):
    (tmp_path / "a.ply").write_bytes(b"ply\nformat ascii 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(io.FormatError):
        io.read_ply(tmp_path / "a.ply")
    (tmp_path / "b.ply").write_bytes(b"not a ply")
    with pytest.raises(io.FormatError):
        io.read_ply(tmp_path / "b.ply")


def test_cloud_dispatch_on_extension(tmp_path, cube):
    for name in ("c.ply", "c.xyz"):
        io.write_cloud(tmp_path / name, cube)
        assert len(io.read_cloud(tmp_path / name)) == 200


# --- distance matrices -----------------------------------------------------------


def test_distance_matrix_layout_and_round_trip(tmp_path):
    D = all_pairs_geodesics(build_graph(gen_shape("sphere", n=50, seed=1), k=6))
    a, b = tmp_path / "a.ghofdm", tmp_path / "b.ghofdm"
    io.write_distance_matrix(a, D)
    raw = a.read_bytes()
    assert raw[:8] == b"GHOF-DM1" and struct.unpack("<Q", raw[8:16])[0] == 50
    assert len(raw) == 16 + 4 * 50 * 50
    back = io.read_distance_matrix(a)
    assert np.array_equal(back.distances, D.distances.astype(np.float32).astype(float))
    io.write_distance_matrix(b, back)
    assert raw == b.read_bytes()


def test_distance_matrix_bad_magic_and_size(tmp_path):
    (tmp_path / "x").write_bytes(b"GHOF-XX1" + struct.pack("<Q", 0))
    with pytest.raises(io.FormatError, match="magic"):
        io.read_distance_matrix(tmp_path / "x")
    (tmp_path / "y").write_bytes(b"GHOF-DM1" + struct.pack("<Q", 3) + b"\0" * 8)
    with pytest.raises(io.FormatError, match="size"):
        io.read_distance_matrix(tmp_path / "y")


def test_distance_matrix_rejects_asymmetry(tmp_path):
    io.write_distance_matrix(tmp_path / "z", GeodesicMatrix(np.array([[0, 1], [2, 0.0]])))
    with pytest.raises(io.FormatError):
        io.read_distance_matrix(tmp_path / "z")


# --- checkpoints -------------------------------------------------------------------


def test_checkpoint_layout_and_round_trip(tmp_path):
    net = init_network((3, 8, 6), lifting_dim=3, seed=2)
    path = tmp_path / "m.ghofnn"
    io.write_checkpoint(path, net, {"seed": 2})
    raw = path.read_bytes()
    assert raw[:8] == b"GHOF-NN1"
    assert struct.unpack("<4I", raw[8:24]) == (3, 3, 8, 6)
    assert len(raw) == 24 + 4 * net.n_params
    back = io.read_checkpoint(path)
    assert np.array_equal(back.get_flat(), io.quantize(net).get_flat())
    assert json.loads((tmp_path / "m.ghofnn.json").read_text()) == {"activation": "leaky_relu", "seed": 2}
    io.write_checkpoint(tmp_path / "n.ghofnn", back)
    assert (tmp_path / "n.ghofnn").read_bytes() == raw


def test_checkpoint_errors(tmp_path):
    (tmp_path / "bad").write_bytes(b"GHOF-DM1" + b"\0" * 8)
    with pytest.raises(io.FormatError, match="magic"):
        io.read_checkpoint(tmp_path / "bad")
    net = init_network((3, 4, 5), lifting_dim=2)
    io.write_checkpoint(tmp_path / "m", net)
    (tmp_path / "short").write_bytes((tmp_path / "m").read_bytes()[:-4])
    with pytest.raises(io.FormatError, match="parameters"):
        io.read_checkpoint(tmp_path / "short")


def test_quantize_is_idempotent():
    q = io.quantize(init_network((3, 8, 5), lifting_dim=2))
    assert np.array_equal(io.quantize(q).get_flat(), q.get_flat())


# --- embeddings and meshes -------------------------------------------------------


def test_embedding_round_trip(tmp_path):
    rows = np.random.default_rng(0).normal(size=(10, 7))
    io.write_embedding(tmp_path / "e.txt", rows)
    assert (tmp_path / "e.txt").read_text().startswith("# x y z w_1 w_2 w_3 w_4\n")
    assert np.array_equal(io.read_embedding(tmp_path / "e.txt"), rows)


def test_obj_round_trip_groups_charts(tmp_path):
    V = np.random.default_rng(1).normal(size=(6, 3))
    mesh = TriangleMesh(V, [[0, 1, 2], [3, 4, 5], [0, 2, 4]], face_chart=[2, 0, 2])
    a, b = tmp_path / "a.obj", tmp_path / "b.obj"
    io.write_obj(a, mesh)
    text = a.read_text()
    assert text.count("usemtl chart_") == 2 and "usemtl chart_0\nf 4 5 6\n" in text
    back = io.read_obj(a)
    assert np.array_equal(back.vertices, V)
    assert back.faces.tolist() == [[3, 4, 5], [0, 1, 2], [0, 2, 4]]
    assert back.face_chart.tolist() == [0, 2, 2]
    io.write_obj(b, back)
    assert a.read_bytes() == b.read_bytes()


def test_obj_rejects_quads(tmp_path):
    (tmp_path / "q.obj").write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(io.FormatError):
        io.read_obj(tmp_path / "q.obj")
