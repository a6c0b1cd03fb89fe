import numpy as np
import pytest

from mflow.checkpoint import checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint
from mflow.encoder import EncoderArchitecture, build_encoder
from mflow.errors import FormatError
from mflow.flow import FlowArchitecture, build_flow
from mflow.geometry import OrientedPointSet, TriangleMesh
from mflow.pointio import (load_cloud, load_obj, load_oriented_ply, save_cloud, save_obj,
                           save_oriented_ply)

from conftest import perturbed_flow


@pytest.mark.parametrize("suffix", [".xyz", ".ply"])
def test_cloud_round_trip_is_bitwise(tmp_path, suffix):
    x = np.random.default_rng(0).standard_normal((50, 3)) * np.array([1e-300, 1.0, 1e300])
    p = tmp_path / f"c{suffix}"
    save_cloud(x, p)
    assert load_cloud(p).tobytes() == x.tobytes()


def test_xyz_error_names_line(tmp_path):
    p = tmp_path / "bad.xyz"
    p.write_text("0 0 0\n1 1 1\n1 x 2\n")
    with pytest.raises(FormatError, match="line 3"):
        load_cloud(p)
    p.write_text("0 0 0\n1 1\n")
    with pytest.raises(FormatError, match="line 2"):
        load_cloud(p)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_cloud(tmp_path / "none.xyz")


def test_oriented_ply(tmp_path):
    rng = np.random.default_rng(1)
    pts = rng.standard_normal((20, 3))
    nrm = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    ops = OrientedPointSet(pts, nrm, rng.standard_normal(20))
    p = tmp_path / "o.ply"
    save_oriented_ply(ops, p)
    assert "property double loglik" in p.read_text()
    back = load_oriented_ply(p)
    assert back.points.tobytes() == pts.tobytes()
    assert back.normals.tobytes() == nrm.tobytes()
    assert back.loglik.tobytes() == ops.loglik.tobytes()


def test_obj_round_trip(tmp_path):
    mesh = TriangleMesh(np.eye(3) * 0.1, [[0, 1, 2]])
    p = tmp_path / "m.obj"
    save_obj(mesh, p)
    back = load_obj(p)
    assert back.vertices.tobytes() == mesh.vertices.tobytes()
    assert np.array_equal(back.faces, mesh.faces)


def test_checkpoint_round_trip(tmp_path):
    m = perturbed_flow(FlowArchitecture(3, 3, 8, "swish", cond_dim=4, use_batchnorm=True), 1)
    m = m.with_params(m.params, np.random.default_rng(2).uniform(0.5, 2, m.buffers.size))
    enc = build_encoder(EncoderArchitecture(3, (8, 16, 32), 4), 3)
    p = tmp_path / "m.mflw"
    save_checkpoint(p, m, enc, {"note": "x"})
    m2, enc2, header = load_checkpoint(p)
    assert m2.arch == m.arch and m2.seed == m.seed
    assert m2.params.tobytes() == m.params.tobytes()
    assert m2.buffers.tobytes() == m.buffers.tobytes()
    assert enc2.params.tobytes() == enc.params.tobytes() and enc2.arch == enc.arch
    assert header["metadata"] == {"note": "x"}
    assert checkpoint_bytes(m2, enc2, {"note": "x"}) == p.read_bytes()


def test_checkpoint_layout():
    m = build_flow(FlowArchitecture(2, 1, 2), 0)
    data = checkpoint_bytes(m)
    assert data[:4] == b"MFLW"
    assert int.from_bytes(data[4:8], "little") == 1
    hlen = int.from_bytes(data[8:16], "little")
    tail = data[16 + hlen:]
    assert np.array_equal(np.frombuffer(tail, "<f8"), m.params)


def test_corrupt_checkpoints():
    good = checkpoint_bytes(build_flow(FlowArchitecture(2, 1, 2), 0))
    for bad in (b"XXXX" + good[4:], good[:-8], good[:10], good[:4] + b"\x02" + good[5:]):
        with pytest.raises(FormatError):
            parse_checkpoint(bad)
