"""Binary array format, checkpoint container, PNG helpers."""

import struct

import numpy as np
import pytest

from splatface.io_format import (CKPT_MAGIC, MAGIC, VERSION, FormatError,
                                 pack_array, read_array, read_checkpoint,
                                 read_png, unpack_array, write_array,
                                 write_checkpoint, write_png)


def test_array_header_layout():
    data = pack_array(np.zeros((2, 3)))
    assert data[:4] == MAGIC == b"HMTK"
    assert struct.unpack_from("<H", data, 4)[0] == VERSION
    assert data[6] == 2                       # rank
    assert struct.unpack_from("<Q", data, 7)[0] == 2
    assert struct.unpack_from("<Q", data, 15)[0] == 3
    assert len(data) == 4 + 2 + 1 + 16 + 48


def test_array_roundtrip_various_ranks(tmp_path):
    rng = np.random.default_rng(0)
    for shape in ((5,), (3, 4), (2, 3, 4), (1, 2, 3, 4)):
        arr = rng.normal(size=shape)
        p = tmp_path / "a.hmtk"
        write_array(p, arr)
        back = read_array(p)
        assert back.shape == arr.shape
        assert np.array_equal(back, arr)


def test_array_rejects_bad_magic_and_version():
    good = pack_array(np.ones(3))
    with pytest.raises(FormatError):
        unpack_array(b"XXXX" + good[4:])
    bad_version = good[:4] + struct.pack("<H", 99) + good[6:]
    with pytest.raises(FormatError):
        unpack_array(bad_version)


def test_unpack_with_offset_chains():
    a = np.arange(4.0)
    b = np.arange(6.0).reshape(2, 3)
    blob = pack_array(a) + pack_array(b)
    ra, off = unpack_array(blob)
    rb, off = unpack_array(blob, off)
    assert np.array_equal(ra, a) and np.array_equal(rb, b)
    assert off == len(blob)


def test_checkpoint_roundtrip_and_order(tmp_path):
    rng = np.random.default_rng(1)
    arrays = {f"p{i}": rng.normal(size=(i + 1, 2)) for i in range(4)}
    header = {"format_version": 1, "note": "x"}
    p = tmp_path / "c.ckpt"
    write_checkpoint(p, header, arrays)
    h, back = read_checkpoint(p)
    assert h["note"] == "x"
    assert list(back.keys()) == list(arrays.keys())
    for k in arrays:
        assert np.array_equal(back[k], arrays[k])


def test_checkpoint_resave_is_byte_identical(tmp_path):
    rng = np.random.default_rng(2)
    arrays = {"a": rng.normal(size=(3, 3)), "b": rng.normal(size=5)}
    p1, p2 = tmp_path / "1.ckpt", tmp_path / "2.ckpt"
    write_checkpoint(p1, {"stage": "motion"}, arrays)
    h, back = read_checkpoint(p1)
    h.pop("array_names")
    write_checkpoint(p2, h, back)
    assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_rejects_corruption(tmp_path):
    p = tmp_path / "c.ckpt"
    write_checkpoint(p, {}, {"a": np.zeros(2)})
    data = bytearray(p.read_bytes())
    assert bytes(data[:8]) == CKPT_MAGIC
    data[0] ^= 0xFF
    p.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        read_checkpoint(p)


def test_png_roundtrip_within_quantization(tmp_path):
    rng = np.random.default_rng(3)
    img = rng.uniform(0, 1, size=(10, 12, 3))
    p = tmp_path / "i.png"
    write_png(p, img)
    back = read_png(p)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-12


def test_png_clamps_out_of_range(tmp_path):
    img = np.full((4, 4, 3), 2.0)
    p = tmp_path / "i.png"
    write_png(p, img)
    assert np.array_equal(read_png(p), np.ones((4, 4, 3)))
