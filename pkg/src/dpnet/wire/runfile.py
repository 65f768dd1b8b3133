"""Self-describing run files: header, frames, footer, trailer.

::

    header   "<4sB16s16sQII16s32sII"  magic b"AMLR", version, blank station and
             sensor ids, common start (GPS ns), sample rate (mHz), samples per
             sensor, run UUID, spec SHA-256, sensor count, CRC32 of the header
    body     frames (see :mod:`dpnet.wire.frame`), each sensor's frames
             contiguous and in time order, sensors in footer order
    footer   b"AMLF", entry count, then per sensor
             (station 16s, sensor 16s, frame count I, sample count Q, coupling d),
             CRC32 of the footer
    trailer  footer offset Q, b"AMLE"
"""

from __future__ import annotations

import os
import struct
import uuid
import warnings
import zlib
from pathlib import Path

import numpy as np

from ..records import RunData, TimeSeriesRecord, samples_to_ns
from .frame import (
    ID_BYTES,
    VERSION,
    FrameError,
    _pack_id,
    _unpack_id,
    chunk_record,
    decode_frame,
    encode_frame,
    rate_to_mhz,
)

FILE_MAGIC = b"AMLR"
FOOTER_MAGIC = b"AMLF"
END_MAGIC = b"AMLE"
FILE_HEADER = struct.Struct("<4sB16s16sQII16s32sI")
U32 = struct.Struct("<I")
FOOTER_HEAD = struct.Struct("<4sI")
FOOTER_ENTRY = struct.Struct("<16s16sIQd")
TRAILER = struct.Struct("<Q4s")
DEFAULT_CHUNK = 1 << 16


class CorruptFileError(Exception):
    """The run file is truncated, fails a CRC, or its footer disagrees with its body."""


class SpecHashMismatch(UserWarning):
    """A run file was produced from a different configuration than the one in use."""


def data_dir():
    """Base directory for relative run paths (``DPNET_DATA_DIR`` overrides the cwd)."""
    return Path(os.environ.get("DPNET_DATA_DIR", "."))


def resolve(path):
    p = Path(path)
    return p if p.is_absolute() else data_dir() / p


def _uuid_bytes(run_id):
    return uuid.UUID(run_id).bytes if run_id else b"\0" * 16


def _hash_bytes(spec_hash):
    return bytes.fromhex(spec_hash) if spec_hash else b"\0" * 32


def encode_run(run, chunk_size=DEFAULT_CHUNK):
    if not run.is_aligned():
        raise ValueError("only aligned runs can be written")
    n = run.n_samples
    if run.records:
        start, mhz = run.start_time, rate_to_mhz(run.sample_rate)
    else:
        start, mhz = 0, 1
    head = FILE_HEADER.pack(
        FILE_MAGIC,
        VERSION,
        b"\0" * ID_BYTES,
        b"\0" * ID_BYTES,
        start,
        mhz,
        n,
        _uuid_bytes(run.run_id),
        _hash_bytes(run.spec_hash),
        len(run.records),
    )
    parts = [head, U32.pack(zlib.crc32(head))]
    entries = []
    for rec in run.records:
        frames = [encode_frame(f) for f in chunk_record(rec, chunk_size)]
        parts.extend(frames)
        entries.append(
            FOOTER_ENTRY.pack(
                _pack_id(rec.station_id), _pack_id(rec.sensor_id), len(frames), len(rec), run.coupling(rec.key)
            )
        )
    footer_offset = sum(len(p) for p in parts)
    footer = FOOTER_HEAD.pack(FOOTER_MAGIC, len(entries)) + b"".join(entries)
    parts += [footer, U32.pack(zlib.crc32(footer)), TRAILER.pack(footer_offset, END_MAGIC)]
    return b"".join(parts)


def decode_run(data, expected_spec_hash=None):
    data = memoryview(data)
    hsize = FILE_HEADER.size + U32.size
    if len(data) < hsize + TRAILER.size:
        raise CorruptFileError("file too short")
    head = FILE_HEADER.unpack_from(data, 0)
    magic, version, _, _, start, mhz, n, run_uuid, spec_hash, n_sensors = head
    if magic != FILE_MAGIC:
        raise CorruptFileError(f"bad file magic {magic!r}")
    if version != VERSION:
        raise CorruptFileError(f"unsupported file version {version}")
    if zlib.crc32(data[: FILE_HEADER.size]) != U32.unpack_from(data, FILE_HEADER.size)[0]:
        raise CorruptFileError("header crc mismatch")
    footer_offset, end_magic = TRAILER.unpack_from(data, len(data) - TRAILER.size)
    if end_magic != END_MAGIC or not hsize <= footer_offset <= len(data) - TRAILER.size:
        raise CorruptFileError("missing or damaged trailer (truncated file?)")
    footer = data[footer_offset : len(data) - TRAILER.size - U32.size]
    if len(footer) < FOOTER_HEAD.size:
        raise CorruptFileError("footer too short")
    if zlib.crc32(footer) != U32.unpack_from(data, len(data) - TRAILER.size - U32.size)[0]:
        raise CorruptFileError("footer crc mismatch")
    fmagic, n_entries = FOOTER_HEAD.unpack_from(footer, 0)
    if fmagic != FOOTER_MAGIC or n_entries != n_sensors:
        raise CorruptFileError("footer does not match header")
    if len(footer) != FOOTER_HEAD.size + n_entries * FOOTER_ENTRY.size:
        raise CorruptFileError("footer length mismatch")

    pos = hsize
    records, couplings = [], {}
    try:
        for i in range(n_entries):
            st_raw, se_raw, n_frames, n_samp, coupling = FOOTER_ENTRY.unpack_from(
                footer, FOOTER_HEAD.size + i * FOOTER_ENTRY.size
            )
            station, sensor = _unpack_id(st_raw), _unpack_id(se_raw)
            chunks, expect = [], start
            for _ in range(n_frames):
                if pos >= footer_offset:
                    raise CorruptFileError("footer frame count exceeds body")
                frame, pos = decode_frame(data[:footer_offset], pos, strict=False)
                if frame.key != (station, sensor) or frame.sample_rate_mhz != mhz:
                    raise CorruptFileError(f"unexpected frame for {frame.key}")
                if frame.start_time != expect:
                    raise CorruptFileError(f"{station}/{sensor}: frames not contiguous")
                chunks.append(frame.samples)
                expect = start + samples_to_ns(sum(c.size for c in chunks), mhz / 1000)
            samples = np.concatenate(chunks) if chunks else np.zeros(0)
            if samples.size != n_samp or n_samp != n:
                raise CorruptFileError(f"{station}/{sensor}: sample count mismatch")
            records.append(TimeSeriesRecord(sensor, station, start, mhz / 1000, samples))
            couplings[(station, sensor)] = coupling
    except FrameError as exc:
        raise CorruptFileError(f"bad frame at byte {pos}: {exc.code}") from exc
    if pos != footer_offset:
        raise CorruptFileError("unaccounted bytes between frames and footer")

    run_id = str(uuid.UUID(bytes=bytes(run_uuid))) if any(run_uuid) else ""
    spec_hex = bytes(spec_hash).hex() if any(spec_hash) else ""
    if expected_spec_hash is not None and expected_spec_hash != spec_hex:
        warnings.warn(
            f"run spec hash {spec_hex[:12]} differs from configuration {expected_spec_hash[:12]}",
            SpecHashMismatch,
            stacklevel=3,
        )
    return RunData(tuple(records), run_id=run_id, spec_hash=spec_hex, couplings=couplings)


def write_run(run, path, chunk_size=DEFAULT_CHUNK):
    path = resolve(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(encode_run(run, chunk_size))
    os.replace(tmp, path)
    return path


def read_run(path, expected_spec_hash=None):
    return decode_run(resolve(path).read_bytes(), expected_spec_hash)
