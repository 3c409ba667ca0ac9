import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lagrangian_gp.mesh import (FOUR_POINT, STENCIL_OFFSETS, THREE_POINT, DiscreteField, FieldFormatError,
                                Mesh, StencilData, extract_stencils, field_stencil_array, l2_error,
                                read_field, write_field)


def random_field(rng, nt=5, nx=6, d=2, dt=0.1, dx=0.2):
    return DiscreteField(Mesh(dt, dx, nt, nx, d), rng.normal(size=(nt, nx, d)))


def test_mesh_validation():
    with pytest.raises(ValueError):
        Mesh(0.0, 0.1, 5, 5)
    with pytest.raises(ValueError):
        Mesh(0.1, -1.0, 5, 5)
    with pytest.raises(ValueError):
        Mesh(0.1, 0.1, 5, 2)
    with pytest.raises(ValueError):
        Mesh(0.1, 0.1, 5, 5, periodic_x=False)


def test_field_shape_and_finiteness():
    mesh = Mesh(0.1, 0.1, 3, 4, 1)
    with pytest.raises(ValueError):
        DiscreteField(mesh, np.zeros((3, 5, 1)))
    with pytest.raises(ValueError):
        DiscreteField(mesh, np.full((3, 4, 1), np.nan))
    f = DiscreteField(mesh, np.zeros((3, 4)))
    assert f.values.shape == (3, 4, 1)
    assert not f.values.flags.writeable


def test_stencil_lengths():
    assert StencilData.zeros(THREE_POINT, 2).points.shape == (7, 2)
    assert StencilData.zeros(FOUR_POINT, 1).points.shape == (9, 1)
    with pytest.raises(ValueError):
        StencilData(THREE_POINT, np.zeros((9, 1)))


def test_experiment_stencil_counts():
    wave = [DiscreteField(Mesh(1 / 40, 1 / 20, 21, 20, 1), np.zeros((21, 20, 1)))] * 2
    assert sum(len(extract_stencils(f, THREE_POINT)) for f in wave) == 760
    sch = [DiscreteField(Mesh(7 / 400, 1 / 10, 9, 10, 2), np.zeros((9, 10, 2)))] * 30
    assert sum(field_stencil_array(f, FOUR_POINT).shape[0] for f in sch) == 2100


def test_smallest_field_stencils():
    vals = np.arange(9.0).reshape(3, 3, 1)
    st3 = extract_stencils(DiscreteField(Mesh(1, 1, 3, 3, 1), vals), THREE_POINT)
    assert len(st3) == 3
    # centers are (i=1, j=0,1,2)
    assert [s.points[0, 0] for s in st3] == [3.0, 4.0, 5.0]


def test_insufficient_time_levels():
    f = DiscreteField(Mesh(1, 1, 2, 4, 1), np.zeros((2, 4, 1)))
    with pytest.raises(ValueError, match="insufficient time levels"):
        extract_stencils(f, THREE_POINT)


@pytest.mark.parametrize("kind", [THREE_POINT, FOUR_POINT])
def test_stencil_entries_follow_offsets(kind, rng):
    f = random_field(rng)
    arr = field_stencil_array(f, kind)
    nt, nx, _ = f.values.shape
    assert arr.shape == ((nt - 2) * nx, len(STENCIL_OFFSETS[kind]), 2)
    n = 0
    for i in range(1, nt - 1):
        for j in range(nx):
            for k, (di, dj) in enumerate(STENCIL_OFFSETS[kind]):
                np.testing.assert_array_equal(arr[n, k], f.values[i + di, (j + dj) % nx])
            n += 1


def test_periodic_wrap(rng):
    f = random_field(rng, d=1)
    s = extract_stencils(f, THREE_POINT)[0]  # i=1, j=0
    # u_- (slot 5) is the value at j = nx - 1
    assert s.points[5, 0] == f.values[1, -1, 0]


def test_l2_error_definition():
    mesh = Mesh(1.0, 1.0, 3, 3, 1)
    a = DiscreteField(mesh, np.zeros((3, 3, 1)))
    vals = np.zeros((3, 3, 1))
    vals[1, 2, 0] = 1.0
    assert l2_error(a, DiscreteField(mesh, vals)) == 1.0
    assert l2_error(a, a) == 0.0


def test_l2_error_weighting(rng):
    f, g = random_field(rng), random_field(rng)
    diff = f.values - g.values
    assert l2_error(f, g) == pytest.approx(np.sqrt(np.sum(diff**2) * 0.1 * 0.2), rel=1e-14)


def test_l2_error_mesh_mismatch(rng):
    with pytest.raises(ValueError):
        l2_error(random_field(rng), random_field(rng, nt=4))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4, 1), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, (3, 4, 1), elements=st.floats(-1e3, 1e3)))
def test_l2_error_symmetric(a, b):
    mesh = Mesh(0.5, 0.25, 3, 4, 1)
    fa, fb = DiscreteField(mesh, a), DiscreteField(mesh, b)
    assert l2_error(fa, fb) == l2_error(fb, fa) >= 0
    assert (l2_error(fa, fb) == 0) == np.array_equal(a, b)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 3, 2), elements=st.floats(allow_nan=False, allow_infinity=False, width=64)))
def test_field_roundtrip_exact(tmp_path_factory, values):
    f = DiscreteField(Mesh(7 / 400, 1 / 10, 3, 3, 2), values)
    path = tmp_path_factory.mktemp("io") / "f.json"
    write_field(f, path)
    g = read_field(path)
    assert g.mesh == f.mesh
    assert np.array_equal(g.values, f.values)


def test_field_file_layout(tmp_path, rng):
    f = random_field(rng)
    write_field(f, tmp_path / "f.json")
    obj = json.loads((tmp_path / "f.json").read_text())
    assert obj["mesh"] == {"dt": 0.1, "dx": 0.2, "nt": 5, "nx": 6, "d": 2, "periodic_x": True}
    assert obj["values"][2][3][1] == f.values[2, 3, 1]


def test_missing_key_named(tmp_path, rng):
    obj = json.loads(json.dumps({"mesh": random_field(rng).mesh.to_dict(), "values": []}))
    del obj["mesh"]["dt"]
    (tmp_path / "f.json").write_text(json.dumps(obj))
    with pytest.raises(FieldFormatError, match="'dt'"):
        read_field(tmp_path / "f.json")


def test_shape_mismatch(tmp_path):
    mesh = Mesh(0.1, 0.1, 3, 3, 1)
    obj = {"mesh": mesh.to_dict(), "values": np.zeros((3, 4, 1)).tolist()}
    (tmp_path / "f.json").write_text(json.dumps(obj))
    with pytest.raises(FieldFormatError, match="shape mismatch"):
        read_field(tmp_path / "f.json")


def test_malformed_file(tmp_path):
    (tmp_path / "f.json").write_text("{not json")
    with pytest.raises(FieldFormatError):
        read_field(tmp_path / "f.json")
