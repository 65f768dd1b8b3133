import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import small_spec
from dpnet.records import RunData, TimeSeriesRecord
from dpnet.simnet import generate_run
from dpnet.wire import (
    EMPTY_FRAME_SIZE,
    ERROR_CODES,
    BadMagic,
    ConflictingFrameError,
    CorruptFileError,
    CrcMismatch,
    Frame,
    FrameError,
    MisalignedGridError,
    MissingSensorError,
    Reassembler,
    SpecHashMismatch,
    Truncated,
    align_records,
    chunk_record,
    decode_frame,
    decode_run,
    encode_frame,
    encode_run,
    loopback_transfer,
    read_run,
    write_run,
)
from dpnet.wire.frame import HEADER_SIZE
from dpnet.wire.fuzz import fuzz_codec
from dpnet.wire.stream import END_RATE, session_frames

ids = st.text(st.characters(min_codepoint=1, max_codepoint=0x7F), min_size=1, max_size=16)
samples = st.lists(st.floats(allow_nan=False, allow_infinity=False), max_size=64).map(np.array)


@given(ids, ids, st.integers(0, 2**63 - 1), st.integers(1, 2**32 - 1), samples)
def test_frame_roundtrip(station, sensor, t0, mhz, x):
    f = Frame(station, sensor, t0, mhz, x)
    data = encode_frame(f)
    assert len(data) == EMPTY_FRAME_SIZE + 8 * x.size
    assert decode_frame(data) == f
    g, end = decode_frame(data + b"tail", strict=False)
    assert g == f and end == len(data)


def test_empty_frame_size():
    data = encode_frame(Frame("s", "x", 0, 1_000_000, np.zeros(0)))
    assert len(data) == EMPTY_FRAME_SIZE == 57


def test_sample_bit_flip_is_crc_error():
    data = bytearray(encode_frame(Frame("s", "x", 0, 1_000_000, np.arange(10.0))))
    data[HEADER_SIZE + 17] ^= 0x10
    with pytest.raises(CrcMismatch):
        decode_frame(bytes(data))


def test_specific_errors():
    data = encode_frame(Frame("s", "x", 0, 1_000_000, np.arange(4.0)))
    with pytest.raises(Truncated):
        decode_frame(data[:-1])
    with pytest.raises(BadMagic):
        decode_frame(b"XXXX" + data[4:])


@settings(max_examples=300)
@given(st.binary(max_size=200))
def test_codec_totality_on_arbitrary_bytes(blob):
    try:
        decode_frame(blob)
    except FrameError as exc:
        assert exc.code in ERROR_CODES


def test_codec_fuzz_no_misdecodes():
    rec = generate_run(small_spec(duration=2.0, n_suzhou=1, n_harbin=1)).records[0]
    frames = [encode_frame(f) for f in chunk_record(rec, 256)]
    report = fuzz_codec(frames, 5000, seed=1)
    assert report.ok
    assert report.misdecoded == 0
    assert set(report.rejected) <= set(ERROR_CODES)


def test_chunk_count():
    rec = TimeSeriesRecord("x", "s", 0, 1000.0, np.zeros(2_000_000))
    assert len(list(chunk_record(rec, 4096))) == math.ceil(2e6 / 4096) == 489
    empty = TimeSeriesRecord("x", "s", 0, 1000.0, np.zeros(0))
    assert list(chunk_record(empty, 4096)) == []


def test_runfile_roundtrip(tmp_path, short_run):
    path = write_run(short_run, tmp_path / "r.amlr")
    back = read_run(path)
    assert back.same_records(short_run)
    assert back.couplings == short_run.couplings
    assert back.run_id == short_run.run_id and back.spec_hash == short_run.spec_hash


def test_runfile_empty_run_roundtrip():
    run = generate_run(small_spec(duration=0.0))
    back = decode_run(encode_run(run))
    assert len(back) == 15 and back.n_samples == 0


def test_truncated_file_is_corrupt(short_run):
    data = encode_run(short_run)
    for cut in (1, 100, len(data) // 2):
        with pytest.raises(CorruptFileError):
            decode_run(data[:-cut])
    bad = bytearray(data)
    bad[len(bad) // 2] ^= 1
    with pytest.raises(CorruptFileError):
        decode_run(bytes(bad))


def test_spec_hash_mismatch_warns(short_run):
    data = encode_run(short_run)
    with pytest.warns(SpecHashMismatch):
        decode_run(data, expected_spec_hash="0" * 64)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        decode_run(data, expected_spec_hash=short_run.spec_hash)


def _all_frames(run, chunk=700):
    return [f for r in run.records for f in session_frames(r, chunk)]


def test_reassembly_permutation_invariant(short_run):
    frames = _all_frames(short_run)
    keys = [r.key for r in short_run.records]
    rng = np.random.default_rng(8)
    reference = None
    for _ in range(10):
        order = rng.permutation(len(frames))
        dup = rng.choice(len(frames), 25)  # at-least-once delivery
        ra = Reassembler(keys)
        for i in list(order) + list(dup):
            ra.add(frames[i])
        got = RunData(tuple(ra.records()))
        assert got.same_records(short_run)
        reference = reference or got
        assert got.same_records(reference)


def test_reassembly_incomplete_and_conflict(short_run):
    frames = _all_frames(short_run)
    keys = [r.key for r in short_run.records]
    ra = Reassembler(keys)
    for f in frames[1:]:
        ra.add(f)
    assert ra.missing == {frames[0].key}
    with pytest.raises(MissingSensorError):
        ra.records()
    data = next(f for f in frames if len(f) and f.sample_rate_mhz != END_RATE)
    forged = Frame(data.station_id, data.sensor_id, data.start_time, data.sample_rate_mhz, data.samples + 1)
    with pytest.raises(ConflictingFrameError):
        ra.add(forged)


def _rec(sensor, start_ns, n, fs=1000.0):
    return TimeSeriesRecord(sensor, "st", start_ns, fs, np.arange(n, dtype=float))


def test_alignment_trims_to_overlap():
    recs = [_rec("a", 0, 10_000), _rec("b", 2_000_000_000, 10_000)]
    run = align_records(recs)
    assert run.is_aligned()
    assert run.n_samples == 10_000 - 2000
    assert run.records[0].samples[0] == 2000.0 and run.records[1].samples[0] == 0.0


def test_alignment_zero_offsets_trim_nothing():
    recs = [_rec(s, 5_000, 3000) for s in "abc"]
    assert align_records(recs).n_samples == 3000


def test_alignment_rejects_grid_error():
    recs = [_rec("a", 0, 1000, fs=100.0), _rec("b", 5_000_000 + 10_000_000, 1000, fs=100.0)]
    with pytest.raises(MisalignedGridError):
        align_records(recs, tolerance=10e-6)
    kept = align_records(recs, tolerance=10e-6, drop_misaligned=True)
    assert [r.sensor_id for r in kept] == ["a"]


def test_loopback_bitwise(short_run, tmp_path):
    got, reports = loopback_transfer(short_run, chunk_size=1024)
    assert got.same_records(short_run)
    assert got.couplings == short_run.couplings
    assert encode_run(got) == encode_run(short_run)
    assert all(rep.acked for rep in reports)


def test_loopback_survives_disconnect(short_run):
    nodes = [list(short_run.records[:5]), list(short_run.records[5:])]
    fault = lambda attempt, sent: attempt == 1 and sent == 30  # noqa: E731
    got, reports = loopback_transfer(short_run, chunk_size=512, nodes=nodes, fault=fault)
    assert got.same_records(short_run)
    assert reports[0].attempts >= 2


def test_loopback_empty_run():
    run = generate_run(small_spec(duration=0.0, n_suzhou=2, n_harbin=1))
    got, reports = loopback_transfer(run)
    assert got.same_records(run)
    assert sum(rep.data_frames for rep in reports) == 0
