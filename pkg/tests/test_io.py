import os
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from roireg import io
from roireg.errors import FormatError


def _dims():
    return st.one_of(st.tuples(st.integers(1, 6), st.integers(1, 6)),
                     st.tuples(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5)))


@st.composite
def grids(draw):
    dims = draw(_dims())
    ch = draw(st.integers(1, 3))
    dt = draw(st.sampled_from([np.uint8, np.float32]))
    shape = dims + ((ch,) if ch > 1 else ())
    data = draw(hnp.arrays(dt, shape))
    spacing = draw(st.lists(st.floats(0.125, 5, width=32), min_size=len(dims), max_size=len(dims)))
    return data, tuple(spacing), ch


def test_header_layout(tmp_path):
    p = tmp_path / "g.rgrd"
    io.write_grid(p, np.arange(6, dtype=np.uint8).reshape(2, 3), spacing=(0.5, 2.0))
    raw = p.read_bytes()
    assert raw[:4] == b"RGRD"
    assert struct.unpack_from("<6I", raw, 4) == (1, 0, 2, 2, 3, 1)
    assert struct.unpack_from("<2f", raw, 28) == (0.5, 2.0)
    assert raw[36:] == bytes(range(6))


def test_channel_fastest(tmp_path):
    p = tmp_path / "f.rgrd"
    v = np.zeros((2, 1, 2), np.float32)
    v[0] = [[1, 2]]
    v[1] = [[3, 4]]
    io.write_field(p, v)
    payload = np.frombuffer(p.read_bytes()[-16:], "<f4")
    assert payload.tolist() == [1, 3, 2, 4]
    back, _ = io.read_field(p)
    assert np.array_equal(back, v)


@given(grids())
def test_round_trip_bytes(tmp_path_factory, g):
    data, spacing, ch = g
    p = tmp_path_factory.mktemp("rt") / "x.rgrd"
    io.write_grid(p, data, spacing, ch)
    first = p.read_bytes()
    back = io.read_grid(p)
    assert back.data.tobytes() == np.ascontiguousarray(data).tobytes()
    assert back.channels == ch and back.data.dtype == data.dtype
    io.write_grid(p, back.data, back.spacing, back.channels)
    assert p.read_bytes() == first


def test_bool_stored_as_u8(tmp_path):
    p = tmp_path / "m.rgrd"
    io.write_grid(p, np.eye(3, dtype=bool))
    assert io.read_grid(p).data.dtype == np.uint8
    assert io.load_mask(p).dtype == bool


@pytest.mark.parametrize("mutate", [
    lambda b: b"XGRD" + b[4:],
    lambda b: b[:4] + struct.pack("<I", 2) + b[8:],
    lambda b: b[:-1],
    lambda b: b + b"\0",
    lambda b: b[:4] + struct.pack("<I", 1) + struct.pack("<I", 7) + b[12:],
    lambda b: b[:10],
])
def test_corrupt_rejected(tmp_path, mutate):
    p = tmp_path / "g.rgrd"
    io.write_grid(p, np.ones((3, 3), np.float32))
    p.write_bytes(mutate(p.read_bytes()))
    with pytest.raises(FormatError):
        io.read_grid(p)


def test_missing_file(tmp_path):
    with pytest.raises(FormatError):
        io.read_grid(tmp_path / "nope.rgrd")


def test_atomic_write_leaves_no_temp(tmp_path):
    io.write_grid(tmp_path / "a.rgrd", np.zeros((2, 2)))
    assert os.listdir(tmp_path) == ["a.rgrd"]


def test_pair_manifest_round_trip(tmp_path):
    (tmp_path / "m").mkdir()
    recs = [io.PairRecord(str(tmp_path / "m" / "a.rgrd"), str(tmp_path / "m" / "b.rgrd"), 0, 2, 0.9123456)]
    path = tmp_path / "out" / "pairs.tsv"
    io.write_pairs(path, io.PairManifest(recs, (4, 8, 8), (1.0, 1.0, 2.0), 0.8))
    text = path.read_text().splitlines()
    assert text[0] == "#samreg-pairs v1"
    assert text[-1] == "../m/a.rgrd\t../m/b.rgrd\t0\t2\t0.912346"
    back = io.read_pairs(path)
    assert back.dims == (4, 8, 8) and back.spacing == (1.0, 1.0, 2.0) and back.epsilon == 0.8
    r = back.records[0]
    assert os.path.samefile(os.path.dirname(r.moving_path), tmp_path / "m")
    assert (r.moving_slice, r.fixed_slice, r.similarity) == (0, 2, 0.912346)


@pytest.mark.parametrize("body", ["a\tb\t0\t0\n", "a\tb\t0\t0\t1.5\n", "a\tb\tx\t0\t0.9\n",
                                  "#epsilon\t0.95\na\tb\t0\t0\t0.9\n"])
def test_bad_pair_manifest(tmp_path, body):
    p = tmp_path / "p.tsv"
    p.write_text("#samreg-pairs v1\n" + body)
    with pytest.raises(FormatError):
        io.read_pairs(p)


def test_pair_manifest_header_required(tmp_path):
    p = tmp_path / "p.tsv"
    p.write_text("a\tb\t0\t0\t0.9\n")
    with pytest.raises(FormatError):
        io.read_pairs(p)


def test_mask_manifest(tmp_path):
    ms = [[np.eye(4, dtype=bool)], [], [np.ones((4, 4), bool), np.zeros((4, 4), bool)]]
    io.write_masks(tmp_path, ms)
    recs = io.read_masks(tmp_path)
    assert [(os.path.basename(r.path), r.slice_index, r.index) for r in recs] == \
           [("m_0_0.rgrd", 0, 0), ("m_2_0.rgrd", 2, 0), ("m_2_1.rgrd", 2, 1)]
    assert np.array_equal(io.load_mask(recs[0].path), ms[0][0])


def test_pgm(tmp_path):
    p = tmp_path / "x.pgm"
    img = np.arange(12, dtype=float).reshape(3, 4)
    m = np.zeros((3, 4), bool)
    m[1, 1] = True
    io.write_pgm(p, img, m)
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n4 3\n255\n") and len(raw) == len(b"P5\n4 3\n255\n") + 12
    assert raw[-12:][5] == 255
