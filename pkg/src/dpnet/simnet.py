"""Synthetic magnetometer-network runs.

Each sensor sees independent white noise, the common-mode noise of its
shield room, optional per-sensor technical lines, and (optionally) a
dark-photon tone that is phase-identical at every sensor of every station.
Random streams are keyed by ``(seed, station, sensor, block)`` so records can
be produced in any order, on any number of workers, with identical bytes.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
import uuid
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import signal

from .physics import DpdmParams, ShieldGeometry, wall_field_amplitude
from .records import NS_PER_S, RunData, TimeSeriesRecord

BLOCK_SAMPLES = 1 << 17
DEFAULT_START_NS = 1_400_000_000 * NS_PER_S

# spawn-key tags for the independent random streams
_SENSOR_NOISE, _COMMON_MODE, _CLOCK_JITTER = 1, 2, 3


class ConfigError(ValueError):
    """Invalid run specification."""


@dataclass(frozen=True)
class SensorConfig:
    sensor_id: str
    station_id: str
    noise_asd: float = 15e-15
    coupling_factor: float = 1.0
    technical_lines: tuple = ()  # (frequency Hz, amplitude T, phase rad)

    def __post_init__(self):
        object.__setattr__(
            self, "technical_lines", tuple(tuple(float(v) for v in ln) for ln in self.technical_lines)
        )
        if self.noise_asd < 0:
            raise ConfigError(f"{self.sensor_id}: noise_asd must be >= 0")
        if not 0 < self.coupling_factor <= 1:
            raise ConfigError(f"{self.sensor_id}: coupling_factor must be in (0, 1]")
        for ln in self.technical_lines:
            if len(ln) != 3:
                raise ConfigError(f"{self.sensor_id}: technical line must be (frequency, amplitude, phase)")


@dataclass(frozen=True)
class StationConfig:
    station_id: str
    location_label: str = ""
    common_mode_asd: float = 5e-15
    shield: ShieldGeometry = ShieldGeometry()
    clock_offset: float = 0.0
    clock_jitter_rms: float = 0.0

    def __post_init__(self):
        if self.common_mode_asd < 0:
            raise ConfigError(f"{self.station_id}: common_mode_asd must be >= 0")
        if self.clock_jitter_rms < 0:
            raise ConfigError(f"{self.station_id}: clock_jitter_rms must be >= 0")
        if abs(self.clock_offset) >= 1:
            raise ConfigError(f"{self.station_id}: |clock_offset| must be < 1 s")


def default_stations(common_mode_asd=5e-15):
    return (
        StationConfig("suzhou", "Suzhou", common_mode_asd=common_mode_asd),
        StationConfig("harbin", "Harbin", common_mode_asd=common_mode_asd),
    )


def default_sensors(noise_asd=15e-15, n_suzhou=13, n_harbin=2):
    sensors = [SensorConfig(f"S{i + 1:02d}", "suzhou", noise_asd) for i in range(n_suzhou)]
    sensors += [SensorConfig(f"H{i + 1:02d}", "harbin", noise_asd) for i in range(n_harbin)]
    return tuple(sensors)


@dataclass(frozen=True)
class RunSpec:
    """Everything needed to regenerate a run bit-for-bit."""

    duration: float = 2000.0
    sample_rate: float = 1000.0
    seed: int = 0
    stations: tuple = field(default_factory=default_stations)
    sensors: tuple = field(default_factory=default_sensors)
    dpdm: DpdmParams | None = None
    start_time_ns: int = DEFAULT_START_NS
    max_analysis_frequency: float = 500.0
    common_mode_knee: float | None = None  # Hz; None keeps common-mode noise white

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(self.stations))
        object.__setattr__(self, "sensors", tuple(self.sensors))
        self.validate()

    def validate(self):
        if self.sample_rate <= 0 or self.duration < 0:
            raise ConfigError("sample_rate must be > 0 and duration >= 0")
        if self.sample_rate < 2 * self.max_analysis_frequency:
            raise ConfigError(
                f"sample_rate {self.sample_rate} Hz violates Nyquist for "
                f"{self.max_analysis_frequency} Hz analysis band"
            )
        n = self.duration * self.sample_rate
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigError("duration * sample_rate must be an integer")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        station_ids = [s.station_id for s in self.stations]
        if len(set(station_ids)) != len(station_ids):
            raise ConfigError("duplicate station ids")
        keys = [(s.station_id, s.sensor_id) for s in self.sensors]
        if len(set(keys)) != len(keys):
            dup = sorted({k for k in keys if keys.count(k) > 1})
            raise ConfigError(f"duplicate sensor ids: {dup}")
        for s in self.sensors:
            if s.station_id not in station_ids:
                raise ConfigError(f"sensor {s.sensor_id} references unknown station {s.station_id}")
            for f, _, _ in s.technical_lines:
                if not 0 < f < self.sample_rate / 2:
                    raise ConfigError(f"technical line at {f} Hz outside (0, Nyquist)")
        if self.dpdm is not None and self.dpdm.frequency > self.sample_rate / 2:
            raise ConfigError("dark-photon frequency above Nyquist")

    @property
    def n_samples(self):
        return int(round(self.duration * self.sample_rate))

    def station(self, station_id):
        return next(s for s in self.stations if s.station_id == station_id)

    def to_dict(self):
        d = asdict(self)
        d["stations"] = [asdict(s) for s in self.stations]
        d["sensors"] = [dict(asdict(s), technical_lines=[list(x) for x in s.technical_lines]) for s in self.sensors]
        if self.dpdm is not None:
            d["dpdm"] = dict(asdict(self.dpdm), polarization=list(self.dpdm.polarization))
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "stations" in d:
            d["stations"] = tuple(
                StationConfig(**dict(s, shield=ShieldGeometry(**s.get("shield", {})))) for s in d["stations"]
            )
        if "sensors" in d:
            d["sensors"] = tuple(SensorConfig(**s) for s in d["sensors"])
        if d.get("dpdm") is not None:
            p = dict(d["dpdm"])
            if "polarization" in p:
                p["polarization"] = tuple(p["polarization"])
            d["dpdm"] = DpdmParams(**p)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown run spec fields: {sorted(unknown)}")
        return cls(**d)

    def spec_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def run_id(self):
        return str(uuid.UUID(bytes=bytes.fromhex(self.spec_hash()[:32]), version=5))


def _key(text):
    return zlib.crc32(text.encode("utf-8"))


def keyed_normal(seed, key, start, count):
    """Standard normals for absolute sample indices ``[start, start + count)``.

    Each block of :data:`BLOCK_SAMPLES` comes from its own Philox stream keyed
    by ``key + (block,)``, so any sub-range is reproducible in isolation.
    """
    out = np.empty(count)
    pos = start
    while pos < start + count:
        block = pos // BLOCK_SAMPLES
        b0 = block * BLOCK_SAMPLES
        take = min(b0 + BLOCK_SAMPLES, start + count) - pos
        ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key) + (block,))
        rng = np.random.Generator(np.random.Philox(ss))
        draws = rng.standard_normal(pos - b0 + take)
        out[pos - start : pos - start + take] = draws[pos - b0 :]
        pos += take
    return out


def white_noise(asd, sample_rate, n, seed, key):
    """White Gaussian noise with one-sided amplitude spectral density ``asd`` (unit/sqrt(Hz))."""
    if asd == 0 or n == 0:
        return np.zeros(n)
    sigma = asd * math.sqrt(sample_rate / 2)
    return sigma * keyed_normal(seed, key, 0, n)


def _shape_knee(x, sample_rate, knee):
    """Give white noise a PSD of asd^2 (1 + knee/f)."""
    if x.size == 0:
        return x
    X = np.fft.rfft(x)
    f = np.fft.rfftfreq(x.size, 1 / sample_rate)
    gain = np.zeros_like(f)
    gain[1:] = np.sqrt(1 + knee / f[1:])
    return np.fft.irfft(X * gain, n=x.size)


@functools.lru_cache(maxsize=8)
def _unit_cosine(frequency, phase, sample_rate, n, start):
    k = np.arange(start, start + n, dtype=float)
    cycles = np.mod(frequency * k / sample_rate, 1.0)
    out = np.cos(2 * np.pi * cycles + phase)
    out.flags.writeable = False
    return out


def tone(amplitude, frequency, phase, sample_rate, n, start=0):
    """``amplitude * cos(2 pi f t + phase)`` sampled at ``t = (start + k) / sample_rate``."""
    return amplitude * _unit_cosine(float(frequency), float(phase), float(sample_rate), int(n), int(start))


def dpdm_signal(params, edge_length, coupling_factor, sample_rate, n):
    """Dark-photon wall field seen by one sensor."""
    geom = ShieldGeometry(edge_length, coupling_factor)
    amp = wall_field_amplitude(params.epsilon, params.frequency, geom) * params.amplitude_scale
    return tone(amp, params.frequency, params.phase, sample_rate, n)


def _sensor_samples(spec, sensor, common):
    n = spec.n_samples
    st = spec.station(sensor.station_id)
    x = white_noise(
        sensor.noise_asd,
        spec.sample_rate,
        n,
        spec.seed,
        (_SENSOR_NOISE, _key(sensor.station_id), _key(sensor.sensor_id)),
    )
    if common is not None:
        x += common
    for f, a, ph in sensor.technical_lines:
        x += tone(a, f, ph, spec.sample_rate, n)
    if spec.dpdm is not None:
        x += dpdm_signal(spec.dpdm, st.shield.edge_length, sensor.coupling_factor, spec.sample_rate, n)
    rec = TimeSeriesRecord(sensor.sensor_id, sensor.station_id, spec.start_time_ns, spec.sample_rate, x)
    if st.clock_offset or st.clock_jitter_rms:
        rec = apply_clock_error(rec, st.clock_offset, st.clock_jitter_rms, spec.seed)
    return rec


def generate_run(spec, workers=1):
    """Simulate every sensor in ``spec``; returns an immutable :class:`RunData`.

    Output is bitwise identical for any ``workers``.
    """
    spec.validate()
    n = spec.n_samples
    commons = {}
    for st in spec.stations:
        if st.common_mode_asd > 0 and n > 0:
            cm = white_noise(st.common_mode_asd, spec.sample_rate, n, spec.seed, (_COMMON_MODE, _key(st.station_id)))
            if spec.common_mode_knee:
                cm = _shape_knee(cm, spec.sample_rate, spec.common_mode_knee)
            commons[st.station_id] = cm
    jobs = lambda s: _sensor_samples(spec, s, commons.get(s.station_id))  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(jobs, spec.sensors))
    else:
        records = [jobs(s) for s in spec.sensors]
    couplings = {(s.station_id, s.sensor_id): s.coupling_factor for s in spec.sensors}
    return RunData(tuple(records), run_id=spec.run_id(), spec_hash=spec.spec_hash(), couplings=couplings)


def spectral_derivative(x, sample_rate):
    """d/dt of a (periodically extended) sampled signal via the FFT."""
    if x.size < 2:
        return np.zeros_like(x)
    X = np.fft.rfft(x)
    f = np.fft.rfftfreq(x.size, 1 / sample_rate)
    D = 2j * np.pi * f * X
    if x.size % 2 == 0:
        D[-1] = 0.0
    return np.fft.irfft(D, n=x.size)


def apply_clock_error(record, offset, jitter_rms, seed):
    """Model a GPS-disciplined clock that is off by ``offset`` seconds with white timing jitter.

    The sample values are what the sensor really saw; the clock error shows up
    in the time stamps: ``start_time`` moves by ``offset``. Jitter is applied
    as a first-order resampling error ``x(t + dt) ~ x(t) + dt x'(t)``.
    """
    if abs(offset) >= 1:
        raise ValueError("|offset| must be < 1 s")
    if jitter_rms < 0:
        raise ValueError("jitter_rms must be >= 0")
    if offset == 0 and jitter_rms == 0:
        return record
    x = record.samples
    if jitter_rms > 0 and x.size:
        dt = jitter_rms * keyed_normal(
            seed, (_CLOCK_JITTER, _key(record.station_id), _key(record.sensor_id)), 0, x.size
        )
        x = x + dt * spectral_derivative(x, record.sample_rate)
    return record.with_samples(x, start_time=record.start_time + round(offset * NS_PER_S))


def white_noise_asd_check(record, other=None, band=None, nperseg=None):
    """Band-averaged Welch ASD of ``record`` (or cross-ASD with ``other``), T/sqrt(Hz)."""
    x = record.samples if isinstance(record, TimeSeriesRecord) else np.asarray(record)
    fs = record.sample_rate if isinstance(record, TimeSeriesRecord) else 1.0
    if x.size < 10_000:
        raise ValueError("record too short for an ASD estimate (need >= 1e4 samples)")
    nperseg = nperseg or min(x.size, int(10 * fs) if fs > 1 else 4096)
    lo, hi = band or (1.0, 0.45 * fs)
    if other is None:
        f, p = signal.welch(x, fs=fs, nperseg=nperseg)
    else:
        y = other.samples if isinstance(other, TimeSeriesRecord) else np.asarray(other)
        f, p = signal.csd(x, y, fs=fs, nperseg=nperseg)
        p = p.real
    m = (f >= lo) & (f <= hi)
    return math.sqrt(max(float(np.mean(p[m])), 0.0))


def with_overrides(spec, **kw):
    return replace(spec, **kw)
