"""Framed sample streaming, GPS alignment and the run-file format."""

from .frame import (
    EMPTY_FRAME_SIZE,
    ERROR_CODES,
    BadIdentifier,
    BadMagic,
    CrcMismatch,
    Frame,
    FrameError,
    OversizeFrame,
    TrailingBytes,
    Truncated,
    UnsupportedVersion,
    chunk_record,
    decode_frame,
    encode_frame,
    iter_frames,
)
from .runfile import CorruptFileError, SpecHashMismatch, decode_run, encode_run, read_run, write_run
from .stream import (
    Collector,
    CollectorError,
    ConflictingFrameError,
    MisalignedGridError,
    MissingSensorError,
    NodeError,
    Reassembler,
    align_records,
    loopback_transfer,
    run_collector,
    run_node,
)
