"""Checkpoint container: canonical bytes, round trips, corruption rejection."""

import struct

import numpy as np
import pytest

from conftest import tiny_config
from visr.errors import DataError
from visr.model import DualStreamModel
from visr.nn import checkpoint as ckpt
from visr.nn.tensor import Tensor


def sample_arrays(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "b.matrix": rng.standard_normal((3, 4)),
        "a.vector": rng.standard_normal(5),
        "c.scalarish": np.array(2.5),
        "d.cube": rng.standard_normal((2, 2, 2)),
    }


def test_round_trip_exact(tmp_path):
    path = tmp_path / "m.vhas"
    arrays = sample_arrays()
    ckpt.save_arrays(path, arrays)
    back = ckpt.load_arrays(path)
    assert set(back) == set(arrays)
    for name, arr in arrays.items():
        np.testing.assert_array_equal(back[name], np.asarray(arr, dtype=np.float64))


def test_canonical_bytes_independent_of_dict_order(tmp_path):
    arrays = sample_arrays()
    reordered = dict(reversed(list(arrays.items())))
    p1, p2 = tmp_path / "a.vhas", tmp_path / "b.vhas"
    ckpt.save_arrays(p1, arrays)
    ckpt.save_arrays(p2, reordered)
    assert p1.read_bytes() == p2.read_bytes()


def test_header_magic_and_version(tmp_path):
    path = tmp_path / "m.vhas"
    ckpt.save_arrays(path, sample_arrays())
    blob = path.read_bytes()
    assert blob[:4] == b"VHAS"
    (version,) = struct.unpack_from("<H", blob, 4)
    assert version == 1


def test_reject_bad_magic(tmp_path):
    path = tmp_path / "m.vhas"
    ckpt.save_arrays(path, sample_arrays())
    blob = bytearray(path.read_bytes())
    blob[:4] = b"NOPE"
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError):
        ckpt.load_arrays(path)


def test_reject_wrong_version(tmp_path):
    path = tmp_path / "m.vhas"
    ckpt.save_arrays(path, sample_arrays())
    blob = bytearray(path.read_bytes())
    struct.pack_into("<H", blob, 4, 99)
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError):
        ckpt.load_arrays(path)


def test_reject_truncation(tmp_path):
    path = tmp_path / "m.vhas"
    ckpt.save_arrays(path, sample_arrays())
    blob = path.read_bytes()
    path.write_bytes(blob[:len(blob) - 9])
    with pytest.raises(DataError):
        ckpt.load_arrays(path)


def test_module_round_trip_and_name_guard(tmp_path):
    cfg = tiny_config()
    model = DualStreamModel(np.random.default_rng(1), cfg)
    path = tmp_path / "model.vhas"
    ckpt.save_module(path, model)

    other = DualStreamModel(np.random.default_rng(2), cfg)
    before = {n: p.data.copy() for n, p in other.named_parameters()}
    ckpt.load_module(path, other)
    changed = any(not np.array_equal(before[n], p.data)
                  for n, p in other.named_parameters())
    assert changed
    for (na, pa), (nb, pb) in zip(model.named_parameters(),
                                  other.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(pa.data, pb.data)


def test_load_module_rejects_name_mismatch(tmp_path):
    path = tmp_path / "part.vhas"
    model = DualStreamModel(np.random.default_rng(1), tiny_config())
    arrays = {n: p.data for n, p in model.named_parameters()}
    arrays.pop(sorted(arrays)[0])
    ckpt.save_arrays(path, arrays)
    with pytest.raises(DataError):
        ckpt.load_module(path, model)


def test_load_module_rejects_shape_mismatch(tmp_path):
    path = tmp_path / "shape.vhas"
    model = DualStreamModel(np.random.default_rng(1), tiny_config())
    arrays = {n: p.data.copy() for n, p in model.named_parameters()}
    first = sorted(arrays)[0]
    arrays[first] = np.zeros(np.asarray(arrays[first]).size + 1)
    ckpt.save_arrays(path, arrays)
    with pytest.raises(DataError):
        ckpt.load_module(path, model)


def test_save_twice_same_model_is_byte_identical(tmp_path):
    model = DualStreamModel(np.random.default_rng(3), tiny_config())
    p1, p2 = tmp_path / "one.vhas", tmp_path / "two.vhas"
    ckpt.save_module(p1, model)
    ckpt.save_module(p2, model)
    assert p1.read_bytes() == p2.read_bytes()
