"""Fixed-layout little-endian sample frames with a trailing CRC32.

Layout (offsets in bytes)::

    0   magic              4s   b"AMLS"
    4   version            B    1
    5   station_id         16s  UTF-8, zero padded
    21  sensor_id          16s  UTF-8, zero padded
    37  start_time_gps_ns  Q
    45  sample_rate_mhz    I    millihertz
    49  sample_count       I    <= 2**20
    53  samples            sample_count * d (float64, tesla)
    ..  crc32              I    over every preceding byte

An empty frame is 57 bytes.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ..records import samples_to_ns

MAGIC = b"AMLS"
VERSION = 1
ID_BYTES = 16
MAX_SAMPLES = 1 << 20

HEADER = struct.Struct("<4sB16s16sQII")
HEADER_SIZE = HEADER.size  # 53
CRC = struct.Struct("<I")
EMPTY_FRAME_SIZE = HEADER_SIZE + CRC.size  # 57


class FrameError(Exception):
    """Base class for decode failures; ``code`` identifies the failure mode."""

    code = "frame_error"


class BadMagic(FrameError):
    code = "bad_magic"


class UnsupportedVersion(FrameError):
    code = "unsupported_version"


class Truncated(FrameError):
    code = "truncated"


class OversizeFrame(FrameError):
    code = "oversize"


class CrcMismatch(FrameError):
    code = "crc_mismatch"


class TrailingBytes(FrameError):
    code = "trailing_bytes"


class BadIdentifier(FrameError):
    code = "bad_identifier"


ERROR_CODES = tuple(
    c.code for c in (BadMagic, UnsupportedVersion, Truncated, OversizeFrame, CrcMismatch, TrailingBytes, BadIdentifier)
)


@dataclass(frozen=True, eq=False)
class Frame:
    """A contiguous chunk of one sensor's record."""

    station_id: str
    sensor_id: str
    start_time: int  # GPS ns
    sample_rate_mhz: int
    samples: np.ndarray

    @property
    def sample_rate(self):
        return self.sample_rate_mhz / 1000.0

    @property
    def key(self):
        return (self.station_id, self.sensor_id)

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.station_id == other.station_id
            and self.sensor_id == other.sensor_id
            and self.start_time == other.start_time
            and self.sample_rate_mhz == other.sample_rate_mhz
            and np.asarray(self.samples, "<f8").tobytes() == np.asarray(other.samples, "<f8").tobytes()
        )

    __hash__ = None


def rate_to_mhz(rate_hz):
    mhz = round(rate_hz * 1000)
    if abs(mhz - rate_hz * 1000) > 1e-6 or not 0 < mhz < 2**32:
        raise ValueError(f"sample rate {rate_hz} Hz is not representable in millihertz")
    return mhz


def _pack_id(text):
    raw = text.encode("utf-8")
    if len(raw) > ID_BYTES:
        raise ValueError(f"identifier {text!r} longer than {ID_BYTES} bytes")
    return raw.ljust(ID_BYTES, b"\0")


def _unpack_id(raw):
    body = raw.rstrip(b"\0")
    if b"\0" in body:
        raise BadIdentifier("embedded NUL in identifier")
    try:
        return body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise BadIdentifier(str(exc)) from None


def encode_frame(frame):
    samples = np.ascontiguousarray(frame.samples, dtype="<f8")
    if samples.size > MAX_SAMPLES:
        raise ValueError(f"{samples.size} samples exceed the {MAX_SAMPLES} per-frame limit")
    if not 0 <= frame.start_time < 2**64:
        raise ValueError("start_time out of range")
    head = HEADER.pack(
        MAGIC,
        VERSION,
        _pack_id(frame.station_id),
        _pack_id(frame.sensor_id),
        frame.start_time,
        frame.sample_rate_mhz,
        samples.size,
    )
    body = head + samples.tobytes()
    return body + CRC.pack(zlib.crc32(body))


def frame_size(buf, offset=0):
    """Total size of the frame starting at ``offset``, from its header alone."""
    if len(buf) - offset < HEADER_SIZE:
        raise Truncated("incomplete header")
    magic, version, _, _, _, _, count = HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"version {version}")
    if count > MAX_SAMPLES:
        raise OversizeFrame(f"sample_count {count} > {MAX_SAMPLES}")
    return HEADER_SIZE + 8 * count + CRC.size


def decode_frame(buf, offset=0, strict=True):
    """Decode one frame at ``offset``.

    Returns the :class:`Frame` (and, when ``strict`` is false, the offset just
    past it). Strict decoding rejects bytes after the frame. Every failure is
    exactly one :class:`FrameError` subclass.
    """
    buf = memoryview(buf).cast("B")
    size = frame_size(buf, offset)
    end = offset + size
    if len(buf) < end:
        raise Truncated(f"need {size} bytes, have {len(buf) - offset}")
    (crc,) = CRC.unpack_from(buf, end - CRC.size)
    if zlib.crc32(buf[offset : end - CRC.size]) != crc:
        raise CrcMismatch("crc32 mismatch")
    if strict and len(buf) != end:
        raise TrailingBytes(f"{len(buf) - end} bytes after frame")
    _, _, station, sensor, start, rate, count = HEADER.unpack_from(buf, offset)
    samples = np.frombuffer(buf, dtype="<f8", count=count, offset=offset + HEADER_SIZE).copy()
    samples.flags.writeable = False
    frame = Frame(_unpack_id(station), _unpack_id(sensor), start, rate, samples)
    return frame if strict else (frame, end)


def iter_frames(buf):
    """Decode back-to-back frames; raises on the first malformed one."""
    pos = 0
    while pos < len(buf):
        frame, pos = decode_frame(buf, pos, strict=False)
        yield frame


def chunk_record(record, chunk_size):
    """Split a record into frames of at most ``chunk_size`` samples."""
    if not 0 < chunk_size <= MAX_SAMPLES:
        raise ValueError("chunk_size must be in (0, 2**20]")
    mhz = rate_to_mhz(record.sample_rate)
    n = len(record)
    for i in range(0, n, chunk_size):
        yield Frame(
            record.station_id,
            record.sensor_id,
            record.start_time + samples_to_ns(i, record.sample_rate),
            mhz,
            record.samples[i : i + chunk_size],
        )
