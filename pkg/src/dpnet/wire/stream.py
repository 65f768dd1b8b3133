"""Node-to-collector streaming over TCP and GPS-grid alignment of the result.

Session protocol
----------------
A node sends, for each of its sensors, an empty *begin* frame stamped with
the record start, the data frames in time order, and an empty *end* frame
stamped with the record end. The end frame carries a sample rate of 0
(:data:`END_RATE`), which no data frame can have, so the two markers stay
distinguishable even for an empty record. The collector answers every end frame with a
``DONE`` acknowledgement (:data:`ACK`) once that sensor's record is complete.
Sensors not acknowledged when a connection drops are re-sent in full on the
next attempt; the collector de-duplicates on ``(sensor, start_time)``, so
delivery is at-least-once with idempotent frames.
"""

from __future__ import annotations

import asyncio
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from ..records import RunData, TimeSeriesRecord, samples_to_ns
from .frame import HEADER_SIZE, Frame, FrameError, _pack_id, _unpack_id, chunk_record, decode_frame, encode_frame, frame_size, rate_to_mhz

log = logging.getLogger(__name__)

ACK = struct.Struct("<4s16s16s")
ACK_MAGIC = b"DONE"
END_RATE = 0
DEFAULT_TOLERANCE_S = 10e-6


class CollectorError(Exception):
    """Base class for collection failures."""


class MissingSensorError(CollectorError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"sensors missing at deadline: {', '.join('/'.join(k) for k in self.missing)}")


class MisalignedGridError(CollectorError):
    def __init__(self, key, residual_s):
        self.key, self.residual_s = key, residual_s
        super().__init__(f"{'/'.join(key)} start grid off by {residual_s * 1e6:.3f} us")


class ConflictingFrameError(CollectorError):
    def __init__(self, key, start_time):
        self.key, self.start_time = key, start_time
        super().__init__(f"conflicting duplicate frame for {'/'.join(key)} at {start_time} ns")


class NodeError(Exception):
    """The collector could not be reached within the retry budget."""


@dataclass
class _SensorState:
    begins: set = field(default_factory=set)
    ends: set = field(default_factory=set)
    frames: dict = field(default_factory=dict)
    rate_mhz: int | None = None
    complete: bool = False


class Reassembler:
    """Order-independent, idempotent reconstruction of per-sensor records."""

    def __init__(self, expected):
        self.order = list(dict.fromkeys(tuple(k) for k in expected))
        self.expected = set(self.order)
        if not self.expected:
            raise ValueError("expected sensor list must be non-empty")
        self._state = {}

    def add(self, frame):
        """Ingest one frame; returns True when it completes its sensor."""
        st = self._state.setdefault(frame.key, _SensorState())
        if len(frame) == 0 and frame.sample_rate_mhz == END_RATE:
            st.ends.add(frame.start_time)
        elif st.rate_mhz is not None and st.rate_mhz != frame.sample_rate_mhz:
            raise ConflictingFrameError(frame.key, frame.start_time)
        elif len(frame) == 0:
            st.rate_mhz = frame.sample_rate_mhz
            st.begins.add(frame.start_time)
        else:
            st.rate_mhz = frame.sample_rate_mhz
            old = st.frames.get(frame.start_time)
            if old is not None:
                if old != frame:
                    raise ConflictingFrameError(frame.key, frame.start_time)
                return False
            st.frames[frame.start_time] = frame
        if st.complete:
            return False
        st.complete = self._tiles(st)
        return st.complete

    @staticmethod
    def _tiles(st):
        if len(st.begins) != 1 or len(st.ends) != 1:
            return False
        t, end = min(st.begins), min(st.ends)
        rate = st.rate_mhz / 1000
        start, n = t, 0
        for s in sorted(st.frames):
            if s != t:
                return False
            n += len(st.frames[s])
            t = start + samples_to_ns(n, rate)
        return t == end

    def is_complete(self, key):
        st = self._state.get(tuple(key))
        return bool(st and st.complete)

    @property
    def missing(self):
        return {k for k in self.expected if not self.is_complete(k)}

    def record(self, key):
        st = self._state[tuple(key)]
        chunks = [st.frames[s].samples for s in sorted(st.frames)]
        samples = np.concatenate(chunks) if chunks else np.zeros(0)
        return TimeSeriesRecord(key[1], key[0], min(st.begins), st.rate_mhz / 1000, samples)

    def records(self):
        if self.missing:
            raise MissingSensorError(self.missing)
        return [self.record(k) for k in self.order]


def align_records(records, tolerance=DEFAULT_TOLERANCE_S, drop_misaligned=False, **run_kw):
    """Trim records to their common GPS window on a shared sample grid.

    The first record (in the given order) defines the grid. A record whose
    start is off that grid by more than ``tolerance`` seconds raises
    :class:`MisalignedGridError` (or is dropped when ``drop_misaligned``).
    """
    records = list(records)
    if not records:
        return RunData((), **run_kw)
    rate = records[0].sample_rate
    if any(r.sample_rate != rate for r in records):
        raise CollectorError("records have different sample rates")
    period_ns = 1e9 / rate
    ref = records[0].start_time
    kept = []
    for r in records:
        k = round((r.start_time - ref) / period_ns)
        residual = r.start_time - ref - (samples_to_ns(k, rate) if k >= 0 else -samples_to_ns(-k, rate))
        if abs(residual) > tolerance * 1e9:
            if drop_misaligned:
                log.warning("dropping %s: %s", r.label, MisalignedGridError(r.key, residual / 1e9))
                continue
            raise MisalignedGridError(r.key, residual / 1e9)
        kept.append((r, k))
    k0 = max(k for _, k in kept)
    length = max(0, min(len(r) - (k0 - k) for r, k in kept))
    start = ref + samples_to_ns(k0, rate) if k0 >= 0 else ref - samples_to_ns(-k0, rate)
    out = []
    for r, k in kept:
        skip = k0 - k
        out.append(r.with_samples(r.samples[skip : skip + length], start_time=start))
    return RunData(tuple(out), **run_kw)


async def _read_frame(reader):
    head = await reader.readexactly(HEADER_SIZE)
    rest = await reader.readexactly(frame_size(head) - HEADER_SIZE)
    return decode_frame(head + rest)


class Collector:
    """Asyncio TCP collector; call :meth:`start`, then await :meth:`result`."""

    def __init__(self, expected, tolerance=DEFAULT_TOLERANCE_S, host="127.0.0.1", port=0, **run_kw):
        self.reassembler = Reassembler(expected)
        self.tolerance = tolerance
        self.host, self.port = host, port
        self.run_kw = run_kw
        self._done = asyncio.Event()
        self._error = None
        self._server = None
        self.sessions = 0

    async def start(self):
        self._server = await asyncio.start_server(self._session, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        return self.port

    async def _session(self, reader, writer):
        self.sessions += 1
        try:
            while not reader.at_eof():
                try:
                    frame = await _read_frame(reader)
                except asyncio.IncompleteReadError:
                    break
                if self.reassembler.add(frame) or (frame.sample_rate_mhz == END_RATE and self.reassembler.is_complete(frame.key)):
                    writer.write(ACK.pack(ACK_MAGIC, _pack_id(frame.station_id), _pack_id(frame.sensor_id)))
                    await writer.drain()
                if not self.reassembler.missing:
                    self._done.set()
        except FrameError as exc:
            log.warning("dropping session after bad frame: %s", exc.code)
        except ConflictingFrameError as exc:
            self._error = exc
            self._done.set()
        except (ConnectionError, OSError):
            pass
        finally:
            writer.close()

    async def result(self, deadline=None):
        try:
            await asyncio.wait_for(self._done.wait(), deadline)
        except asyncio.TimeoutError:
            raise MissingSensorError(self.reassembler.missing) from None
        finally:
            self._server.close()
            await self._server.wait_closed()
        if self._error is not None:
            raise self._error
        return align_records(self.reassembler.records(), self.tolerance, **self.run_kw)


async def run_collector(host, port, expected, tolerance=DEFAULT_TOLERANCE_S, deadline=None, on_ready=None, **run_kw):
    """Listen on ``host:port`` until every expected sensor is complete; returns aligned :class:`RunData`."""
    col = Collector(expected, tolerance, host, port, **run_kw)
    bound = await col.start()
    if on_ready is not None:
        on_ready(bound)
    return await col.result(deadline)


@dataclass
class NodeReport:
    data_frames: int = 0
    frames_sent: int = 0
    attempts: int = 0
    acked: list = field(default_factory=list)


def session_frames(record, chunk_size):
    mhz = rate_to_mhz(record.sample_rate)
    empty = np.zeros(0)
    yield Frame(record.station_id, record.sensor_id, record.start_time, mhz, empty)
    yield from chunk_record(record, chunk_size)
    yield Frame(record.station_id, record.sensor_id, record.end_time, END_RATE, empty)


async def run_node(source, host, port, chunk_size=4096, max_retries=5, backoff=0.05, fault=None):
    """Stream every record in ``source`` to the collector at ``host:port``.

    ``fault(attempt, frames_sent_this_attempt)`` returning True aborts the
    connection at that point; it exists for fault-injection tests.
    """
    records = list(source)
    report = NodeReport(data_frames=sum(-(-len(r) // chunk_size) for r in records))
    pending = {r.key: r for r in records}
    delay = backoff
    while pending:
        report.attempts += 1
        if report.attempts > max_retries + 1:
            raise NodeError(f"collector {host}:{port} unreachable after {max_retries} retries")
        try:
            reader, writer = await asyncio.open_connection(host, port)
        except OSError:
            await asyncio.sleep(delay)
            delay *= 2
            continue
        sent = 0
        try:
            aborted = False
            for rec in list(pending.values()):
                for frame in session_frames(rec, chunk_size):
                    if fault is not None and fault(report.attempts, sent):
                        aborted = True
                        break
                    writer.write(encode_frame(frame))
                    sent += 1
                    if sent % 64 == 0:
                        await writer.drain()
                if aborted:
                    break
            if aborted:
                writer.transport.abort()
                raise ConnectionResetError("injected fault")
            await writer.drain()
            while pending:
                raw = await reader.readexactly(ACK.size)
                magic, st, se = ACK.unpack(raw)
                key = (_unpack_id(st), _unpack_id(se))
                if magic == ACK_MAGIC and key in pending:
                    del pending[key]
                    report.acked.append(key)
            writer.close()
        except (OSError, asyncio.IncompleteReadError):
            await asyncio.sleep(delay)
            delay *= 2
        finally:
            report.frames_sent += sent
    return report


def loopback_transfer(run, chunk_size=4096, nodes=None, tolerance=DEFAULT_TOLERANCE_S, fault=None, deadline=60.0):
    """Stream ``run`` through a local collector; one node per sensor unless ``nodes`` groups them."""
    groups = nodes or [[r] for r in run.records]

    async def main():
        col = Collector([r.key for r in run.records], tolerance, run_id=run.run_id, spec_hash=run.spec_hash, couplings=dict(run.couplings))
        port = await col.start()
        tasks = [
            asyncio.create_task(run_node(g, "127.0.0.1", port, chunk_size, fault=fault if i == 0 else None))
            for i, g in enumerate(groups)
        ]
        result = await col.result(deadline)
        reports = await asyncio.gather(*tasks)
        return result, reports

    return asyncio.run(main())
