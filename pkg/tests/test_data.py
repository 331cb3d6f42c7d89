import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spkinfo import data
from spkinfo.data import SpeakerDataset
from spkinfo.errors import DimensionMismatchError, InsufficientDataError, ParseError, ValidationError


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


CSV_2x3 = """speaker_id,f0,f1,f2,f3
b,1,2,3,4
a,0.5,0.25,-1,2
b,5,6,7,8
a,1e-3,2,3,4
b,0,0,0,1
a,9,9,9,9
"""


def test_load_csv_counts(tmp_path):
    ds = data.load(_write(tmp_path, "x.csv", CSV_2x3))
    assert ds.n_speakers == 2
    assert ds.n_vectors == 6
    assert ds.dim == 4
    assert ds.speaker_ids == ["a", "b"]
    np.testing.assert_array_equal(ds.speakers["b"][1], [5, 6, 7, 8])


def test_csv_inf_names_the_row(tmp_path):
    p = _write(tmp_path, "x.csv", "speaker_id,f0,f1\na,1,2\na,inf,3\n")
    with pytest.raises(ValidationError, match="line 3"):
        data.load(p)


def test_csv_bad_number_and_header(tmp_path):
    with pytest.raises(ParseError, match="line 2"):
        data.load(_write(tmp_path, "a.csv", "speaker_id,f0\na,abc\n"))
    with pytest.raises(ParseError, match="line 1"):
        data.load(_write(tmp_path, "b.csv", "spk,f0\na,1\n"))


def test_csv_dimension_mismatch(tmp_path):
    with pytest.raises(DimensionMismatchError):
        data.load(_write(tmp_path, "x.csv", "speaker_id,f0,f1\na,1,2\na,3\n"))


def test_binary_round_trip_is_byte_identical(tmp_path, small_ds):
    p1 = tmp_path / "a.bin"
    data.save(small_ds, p1)
    again = data.load(p1)
    p2 = tmp_path / "b.bin"
    data.save(again, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert dict(again.manifest) == {"source": "unit", "duration_s": 5.0}


def test_binary_layout(small_ds):
    blob = data.write_binary_bytes(small_ds)
    magic, version, dim, count = struct.unpack_from("<4sIIQ", blob, 0)
    assert (magic, version, dim, count) == (b"BIOV", 1, 4, 6)
    (n,) = struct.unpack_from("<H", blob, 20)
    assert blob[22 : 22 + n] == b"alice"
    first = struct.unpack_from("<4d", blob, 22 + n)
    np.testing.assert_array_equal(first, small_ds.speakers["alice"][0])
    assert len(blob) == 20 + 3 * (2 + 5 + 32) + 3 * (2 + 3 + 32)


def test_binary_errors(small_ds):
    blob = data.write_binary_bytes(small_ds)
    with pytest.raises(ParseError, match="magic"):
        data.read_binary_bytes(b"XXXX" + blob[4:])
    with pytest.raises(ParseError, match="truncated"):
        data.read_binary_bytes(blob[:-3])
    bad = bytearray(blob)
    bad[-8:] = struct.pack("<d", float("nan"))
    with pytest.raises(ValidationError):
        data.read_binary_bytes(bytes(bad))


def test_constructor_rejects_bad_vectors():
    with pytest.raises(ValidationError):
        SpeakerDataset(2, {"a": [[1.0, np.nan]]})
    with pytest.raises(DimensionMismatchError):
        SpeakerDataset(2, {"a": [[1.0, 2.0, 3.0]]})
    with pytest.raises(ValidationError):
        SpeakerDataset(2, {"": [[1.0, 2.0]]})
    with pytest.raises(ValidationError):
        SpeakerDataset(2, {"a": np.empty((0, 2))})


def _ds(n, k=3, dim=2, seed=0):
    rng = np.random.default_rng(seed)
    return SpeakerDataset(dim, {f"s{i:03d}": rng.normal(size=(k, dim)) for i in range(n)})


def test_split_deterministic_and_disjoint():
    ds = _ds(10)
    dev, meas = data.split_by_speaker(ds, 0.5, 7)
    assert dev.n_speakers == meas.n_speakers == 5
    assert not set(dev.speakers) & set(meas.speakers)
    dev2, meas2 = data.split_by_speaker(ds, 0.5, 7)
    assert dev2.speaker_ids == dev.speaker_ids and meas2.speaker_ids == meas.speaker_ids


def test_split_rounding_rule():
    ds = SpeakerDataset(1, {f"s{i:04d}": [[float(i)]] for i in range(5000)})
    dev, meas = data.split_by_speaker(ds, 0.24, 1)
    assert dev.n_speakers == 1200
    assert meas.n_speakers == 3800


def test_split_needs_two_speakers():
    with pytest.raises(InsufficientDataError):
        data.split_by_speaker(_ds(1), 0.5, 0)


@given(n=st.integers(2, 40), frac=st.floats(0.01, 0.99), seed=st.integers(0, 2**32))
def test_split_partition_property(n, frac, seed):
    ds = _ds(n, k=1)
    dev, meas = data.split_by_speaker(ds, frac, seed)
    assert set(dev.speakers) | set(meas.speakers) == set(ds.speakers)
    assert not set(dev.speakers) & set(meas.speakers)


def test_subsample_basic():
    ds = _ds(3, k=2)
    sub = data.subsample(ds, 2, 1, 0)
    assert sub.n_speakers == 2
    assert all(a.shape == (1, 2) for a in sub.speakers.values())
    again = data.subsample(ds, 2, 1, 0)
    assert data.write_binary_bytes(sub) == data.write_binary_bytes(again)


def test_subsample_too_many_samples_reports_maximum():
    ds = _ds(3, k=2)
    with pytest.raises(InsufficientDataError) as info:
        data.subsample(ds, 1, 5, 0)
    assert info.value.attainable == 0
    with pytest.raises(InsufficientDataError) as info:
        data.subsample(ds, 4, 2, 0)
    assert info.value.attainable == 3


@given(seed=st.integers(0, 2**31), n=st.integers(1, 6), k=st.integers(1, 4))
def test_subsample_ignores_input_order(seed, n, k):
    ds = _ds(6, k=5, seed=seed % 7)
    reversed_ds = SpeakerDataset(ds.dim, dict(reversed(list(ds.speakers.items()))))
    a = data.subsample(ds, n, k, seed)
    b = data.subsample(reversed_ds, n, k, seed)
    assert data.write_binary_bytes(a) == data.write_binary_bytes(b)
    assert all(x.shape == (k, 2) for x in a.speakers.values())


@given(st.lists(st.lists(st.floats(-1e300, 1e300, allow_nan=False), min_size=3, max_size=3),
                min_size=1, max_size=8))
def test_csv_and_binary_round_trip(rows):
    ds = SpeakerDataset.from_arrays([f"sp{i % 3}" for i in range(len(rows))], np.array(rows))
    for text in (data.write_csv_text(ds),):
        back = data.read_csv_text(text)
        assert data.write_binary_bytes(back) == data.write_binary_bytes(ds)
    back = data.read_binary_bytes(data.write_binary_bytes(ds))
    assert data.write_csv_text(back) == data.write_csv_text(ds)
