"""Time-series containers shared by the simulator, the wire layer and the analysis."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

NS_PER_S = 1_000_000_000


def samples_to_ns(n, sample_rate):
    """Exact duration of ``n`` samples in ns, rounded half-up (rate taken in mHz)."""
    mhz = round(sample_rate * 1000)
    return (n * 10**12 + mhz // 2) // mhz


@dataclass(frozen=True, eq=False)
class TimeSeriesRecord:
    """GPS-stamped magnetic-field samples (T) from one sensor."""

    sensor_id: str
    station_id: str
    start_time: int  # GPS ns
    sample_rate: float  # Hz
    samples: np.ndarray

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype="<f8")
        if s.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(s)):
            raise ValueError(f"non-finite samples in record {self.key}")
        if s.flags.writeable:
            s = s.copy() if s is self.samples else s
            s.flags.writeable = False
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "start_time", int(self.start_time))
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    @property
    def key(self):
        return (self.station_id, self.sensor_id)

    @property
    def label(self):
        return f"{self.station_id}/{self.sensor_id}"

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    def sample_time_ns(self, n):
        """GPS time (ns) of sample index ``n``, rounded to the nearest ns."""
        return self.start_time + samples_to_ns(n, self.sample_rate)

    @property
    def end_time(self):
        return self.sample_time_ns(self.samples.size)

    def with_samples(self, samples, start_time=None):
        return replace(
            self,
            samples=samples,
            start_time=self.start_time if start_time is None else start_time,
        )

    def __eq__(self, other):
        if not isinstance(other, TimeSeriesRecord):
            return NotImplemented
        return (
            self.sensor_id == other.sensor_id
            and self.station_id == other.station_id
            and self.start_time == other.start_time
            and self.sample_rate == other.sample_rate
            and self.samples.shape == other.samples.shape
            and self.samples.tobytes() == other.samples.tobytes()
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class RunData:
    """An aligned set of records from every sensor in one observation run."""

    records: tuple[TimeSeriesRecord, ...]
    run_id: str = ""
    spec_hash: str = ""
    couplings: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        keys = [r.key for r in self.records]
        if len(set(keys)) != len(keys):
            raise ValueError("duplicate (station, sensor) in run")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def sample_rate(self):
        return self.records[0].sample_rate

    @property
    def n_samples(self):
        return len(self.records[0]) if self.records else 0

    @property
    def start_time(self):
        return self.records[0].start_time

    def coupling(self, key):
        return self.couplings.get(key, 1.0)

    def is_aligned(self):
        if not self.records:
            return True
        r0 = self.records[0]
        return all(
            r.start_time == r0.start_time and r.sample_rate == r0.sample_rate and len(r) == len(r0)
            for r in self.records
        )

    def slice(self, start, stop):
        """Sub-run covering samples ``[start, stop)`` of every record."""
        recs = []
        for r in self.records:
            recs.append(r.with_samples(r.samples[start:stop], start_time=r.sample_time_ns(start)))
        return replace(self, records=tuple(recs))

    def map_samples(self, fn):
        """New run with ``fn(record) -> samples`` applied to every record."""
        return replace(self, records=tuple(r.with_samples(fn(r)) for r in self.records))

    def same_records(self, other):
        """Bitwise equality of the records, ignoring run metadata."""
        return len(self.records) == len(other.records) and all(
            a == b for a, b in zip(self.records, other.records)
        )

    def __eq__(self, other):
        if not isinstance(other, RunData):
            return NotImplemented
        return (
            self.run_id == other.run_id
            and self.spec_hash == other.spec_hash
            and self.same_records(other)
        )

    __hash__ = None
