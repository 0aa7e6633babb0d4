import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays, array_shapes
from numpy.testing import assert_array_equal

from mlpfusion import io as tio
from mlpfusion.compress import compress
from mlpfusion.errors import InvalidArgument, TensorIOError
from mlpfusion.fixtures import make_fixture
from mlpfusion.ntk import output_error


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, array_shapes(min_dims=0, max_dims=4, max_side=5),
              elements=st.floats(allow_nan=True, allow_infinity=True)))
def test_tensor_round_trip_bitwise(tmp_path_factory, a):
    path = tmp_path_factory.mktemp("t") / "a.ntkf"
    tio.save_tensor(path, a)
    b = tio.load_tensor(path)
    assert b.shape == a.shape
    assert a.tobytes() == b.tobytes()


def test_tensor_layout(tmp_path):
    path = tmp_path / "x.ntkf"
    tio.save_tensor(path, np.array([[1.0, 2.0, 3.0]]))
    raw = path.read_bytes()
    assert raw[:4] == b"NTKF"
    assert struct.unpack("<IIII", raw[4:20]) == (1, 2, 1, 3)
    assert struct.unpack("<3d", raw[20:]) == (1.0, 2.0, 3.0)
    assert len(raw) == 20 + 24


@pytest.mark.parametrize("mutate", [
    lambda r: b"XXXX" + r[4:],
    lambda r: r[:4] + struct.pack("<I", 2) + r[8:],
    lambda r: r[:-8],
    lambda r: r[:10],
])
def test_corrupt_tensor_files(tmp_path, mutate):
    path = tmp_path / "x.ntkf"
    tio.save_tensor(path, np.ones((2, 2)))
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(TensorIOError) as info:
        tio.load_tensor(path)
    assert info.value.path == str(path)


def test_missing_file_reports_path(tmp_path):
    with pytest.raises(TensorIOError) as info:
        tio.load_tensor(tmp_path / "nope.ntkf")
    assert "nope.ntkf" in info.value.path


@pytest.fixture(scope="module")
def fx():
    return make_fixture(m=4)


@pytest.mark.parametrize("method,kw", [
    ("fuse", dict(k=8)), ("fuse", dict(k=8, strategy="p_into_w2")), ("ablation", dict(k=8)),
    ("sketch", dict(k=8)), ("svd", dict(t=5)), ("prune", dict(ratio=0.6)), ("mmd", dict(k=8, steps=3)),
])
def test_model_round_trip_preserves_forward(tmp_path, fx, method, kw):
    comp = compress(fx.teacher, method, seed=1, **kw)
    tio.save_model(comp, tmp_path / "m", head=fx.head, compression={"method": method})
    back, head, manifest = tio.load_model(tmp_path / "m")
    assert type(back) is type(comp)
    assert manifest["compression"]["method"] == method
    assert_array_equal(head.r, fx.head.r)
    for X in fx.inputs:
        assert_array_equal(back.forward(X), comp.forward(X))


def test_teacher_round_trip_exact(tmp_path, fx):
    tio.save_model(fx.teacher, tmp_path / "t")
    back, head, _ = tio.load_model(tmp_path / "t" / "manifest.json")
    assert head is None
    assert output_error(fx.teacher, back, fx.inputs) == 0.0


def test_manifest_validation(tmp_path, fx):
    tio.save_model(fx.teacher, tmp_path / "t")
    mpath = tmp_path / "t" / "manifest.json"
    doc = json.loads(mpath.read_text())
    for change in ({"activation": "swish"}, {"p": 5}):
        mpath.write_text(json.dumps({**doc, **change}))
        with pytest.raises(InvalidArgument):
            tio.load_model(mpath)
    mpath.write_text("{not json")
    with pytest.raises(InvalidArgument):
        tio.load_model(mpath)
    mpath.write_text(json.dumps({**doc, "files": {**doc["files"], "w1": "gone.ntkf"}}))
    with pytest.raises(TensorIOError):
        tio.load_model(mpath)


def test_identity_activation_not_serialisable(tmp_path):
    from mlpfusion.mlp import MlpWeights

    m = MlpWeights(np.ones((1, 1)), [0.0], np.ones((1, 1)), [0.0], "identity")
    with pytest.raises(InvalidArgument):
        tio.save_model(m, tmp_path / "m")


def test_inputs_round_trip(tmp_path, fx):
    tio.save_inputs(fx.inputs, tmp_path / "in")
    back = tio.load_inputs(tmp_path / "in")
    assert len(back) == len(fx.inputs)
    for a, b in zip(back, fx.inputs):
        assert_array_equal(a, b)
    with pytest.raises(TensorIOError):
        tio.load_inputs(tmp_path / "empty")
