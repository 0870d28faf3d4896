import numpy as np
import pytest

from pcdenoise import io
from pcdenoise.geometry import PointCloud
from pcdenoise.mesh import TriangleMesh
from pcdenoise.synthetic import icosphere


def test_xyz_two_points(tmp_path):
    p = tmp_path / "a.xyz"
    p.write_text("0 0 0\n1 2 3\n")
    cloud = io.read_point_cloud(p)
    np.testing.assert_array_equal(cloud.points, [[0, 0, 0], [1, 2, 3]])


def test_xyz_comments_and_blank_lines(tmp_path):
    p = tmp_path / "a.xyz"
    p.write_text("# header\n\n0 0 0  # trailing\n1 2 3 9 9\n")
    assert len(io.read_xyz(p)) == 2


@pytest.mark.parametrize("text, line", [("0 0 0\n1 2\n", 2), ("0 0 0\n\n1 x 3\n", 3)])
def test_xyz_errors_name_line(tmp_path, text, line):
    p = tmp_path / "bad.xyz"
    p.write_text(text)
    with pytest.raises(io.FormatError, match=f":{line}:"):
        io.read_xyz(p)


def _random(rng, n=10_000):
    return rng.normal(size=(n, 3)) * 10.0 ** rng.integers(-8, 8, (n, 1))


def test_xyz_round_trip_exact(tmp_path, rng):
    pts = _random(rng)
    io.write_point_cloud(tmp_path / "r.xyz", PointCloud(pts))
    np.testing.assert_array_equal(io.read_point_cloud(tmp_path / "r.xyz").points, pts)


@pytest.mark.parametrize("binary", [False, True])
def test_ply_round_trip_exact(tmp_path, rng, binary):
    pts = _random(rng)
    labels = rng.integers(0, 3, len(pts)).astype(np.int8)
    io.write_point_cloud(tmp_path / "r.ply", PointCloud(pts, labels), binary=binary)
    back = io.read_point_cloud(tmp_path / "r.ply")
    np.testing.assert_array_equal(back.points, pts)
    np.testing.assert_array_equal(back.labels, labels)


def test_ply_float_vertices_and_quads(tmp_path):
    p = tmp_path / "q.ply"
    p.write_text(
        "ply\nformat ascii 1.0\ncomment hand made\nelement vertex 4\n"
        "property float x\nproperty float y\nproperty float z\n"
        "element face 1\nproperty list uchar int vertex_indices\nend_header\n"
        "0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n"
    )
    pts, labels, faces = io.read_ply(p)
    assert pts.dtype == np.float64 and labels is None
    assert faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_ply_binary_float(tmp_path):
    body = np.array([(0.5, 1.5, 2.5, 7)], dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("label", "<i4")])
    header = (
        "ply\nformat binary_little_endian 1.0\nelement vertex 1\n"
        "property float x\nproperty float y\nproperty float z\nproperty int label\nend_header\n"
    )
    p = tmp_path / "b.ply"
    p.write_bytes(header.encode() + body.tobytes())
    cloud = io.read_point_cloud(p)
    np.testing.assert_array_equal(cloud.points, [[0.5, 1.5, 2.5]])
    assert cloud.labels.tolist() == [7]


def test_ply_big_endian_rejected(tmp_path):
    p = tmp_path / "be.ply"
    p.write_bytes(b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nend_header\n")
    with pytest.raises(io.FormatError, match="unsupported encoding"):
        io.read_ply(p)


def test_ply_unknown_element(tmp_path):
    p = tmp_path / "e.ply"
    p.write_text("ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nelement edge 2\nend_header\n")
    with pytest.raises(io.FormatError, match="unsupported PLY element 'edge'"):
        io.read_ply(p)


def test_ply_malformed_rows(tmp_path):
    p = tmp_path / "m.ply"
    p.write_text(
        "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\n"
        "property double z\nend_header\n0 0 0\n1 1\n"
    )
    with pytest.raises(io.FormatError, match=":9:"):
        io.read_ply(p)


def test_not_ply(tmp_path):
    p = tmp_path / "n.ply"
    p.write_text("hello\n")
    with pytest.raises(io.FormatError):
        io.read_ply(p)


def test_unknown_extension(tmp_path):
    with pytest.raises(io.FormatError):
        io.read_point_cloud(tmp_path / "x.stl")


@pytest.mark.parametrize("suffix, binary", [("off", False), ("ply", False), ("ply", True)])
def test_mesh_round_trip(tmp_path, suffix, binary):
    mesh = icosphere(2)
    path = tmp_path / f"m.{suffix}"
    io.write_mesh(path, mesh, binary=binary)
    back = io.read_mesh(path)
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)


def test_off_polygons_triangulated(tmp_path):
    p = tmp_path / "sq.off"
    p.write_text("OFF\n# square\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    mesh = io.read_off(p)
    assert mesh.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_off_errors(tmp_path):
    p = tmp_path / "bad.off"
    p.write_text("OFF\n3 1 0\n0 0 0\n1 0 0\n")
    with pytest.raises(io.FormatError):
        io.read_off(p)


def test_off_as_cloud(tmp_path):
    io.write_mesh(tmp_path / "m.off", TriangleMesh(np.eye(3), [[0, 1, 2]]))
    assert len(io.read_point_cloud(tmp_path / "m.off")) == 3
