import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from mpkrbm.container import MAGIC, read_container, write_container
from mpkrbm.errors import FormatError


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "C": rng.standard_normal((4, 3, 2)),
        "bias": rng.standard_normal(7),
        "alpha": np.float64(2.0),
        "tiny": np.array(-0.0),
    }
    path = tmp_path / "t.mpk"
    write_container(path, tensors)
    back = read_container(path)
    assert list(back) == list(tensors)
    for name in tensors:
        original = np.asarray(tensors[name], dtype=np.float64)
        assert back[name].shape == original.shape
        assert original.tobytes() == back[name].tobytes()


@settings(max_examples=25, deadline=None)
@given(
    st.dictionaries(
        st.text(st.characters(min_codepoint=33, max_codepoint=126), min_size=1, max_size=12),
        arrays(np.float64, array_shapes(min_dims=0, max_dims=3, max_side=4),
               elements=st.floats(allow_nan=False, width=64)),
        max_size=4,
    )
)
def test_round_trip_property(tmp_path_factory, tensors):
    path = tmp_path_factory.mktemp("c") / "t.mpk"
    write_container(path, tensors)
    back = read_container(path)
    assert set(back) == set(tensors)
    for name, arr in tensors.items():
        assert np.asarray(arr, dtype=np.float64).tobytes() == back[name].tobytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "t.mpk"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(FormatError):
        read_container(path)


def test_truncated_file(tmp_path):
    path = tmp_path / "t.mpk"
    write_container(path, {"x": np.arange(10.0)})
    data = path.read_bytes()
    path.write_bytes(data[:-13])
    with pytest.raises(FormatError):
        read_container(path)


def test_corrupt_payload_fails_crc(tmp_path):
    path = tmp_path / "t.mpk"
    write_container(path, {"x": np.arange(10.0)})
    data = bytearray(path.read_bytes())
    data[-20] ^= 0xFF        # flip a byte inside the float payload
    path.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        read_container(path)


def test_magic_bytes_on_disk(tmp_path):
    path = tmp_path / "t.mpk"
    write_container(path, {})
    assert path.read_bytes()[:4] == MAGIC


def test_scalar_rank_zero(tmp_path):
    path = tmp_path / "t.mpk"
    write_container(path, {"alpha": 2.5})
    back = read_container(path)
    assert back["alpha"].shape == ()
    assert float(back["alpha"]) == 2.5
