"""Pipeline configuration files.

A configuration is a JSON object::

    {
      "run": {...RunSpec fields...}      or  "run_spec": "path/to/runspec.json",
      "spectral": {"segment_length": 100000, "overlap_fraction": 0.5,
                   "window": "hann", "band": [1.0, 500.0]},
      "detection": {"cl": 0.95, "window_bins": 64, "trials": 200,
                    "subset": "all", "threshold_mode": "per_bin",
                    "technical_lines": [50.0], "line_tolerance_hz": 0.05,
                    "uniformity_sigma": 5.0, "edge_length": 2.0},
      "output_dir": "out",
      "seed": 0
    }

Every section is optional. Errors name the offending line of the file.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .correlator import SUBSETS, SpectralConfig, SpectralError
from .detect.candidates import VetoPolicy
from .detect.threshold import MODES
from .physics import DomainError
from .simnet import ConfigError, RunSpec

TOP_KEYS = {"run", "run_spec", "spectral", "detection", "output_dir", "seed"}


class ConfigFileError(ConfigError):
    """A configuration file is malformed; carries the file and line of the problem."""

    def __init__(self, message, path=None, line=None):
        self.path, self.line = path, line
        where = f"{path or '<config>'}:{line}: " if line else (f"{path}: " if path else "")
        super().__init__(where + message)


@dataclass(frozen=True)
class DetectionConfig:
    cl: float = 0.95
    window_bins: int = 64
    trials: int = 200
    subset: str = "all"
    threshold_mode: str = "per_bin"
    technical_lines: tuple = ()
    line_tolerance_hz: float = 0.05
    uniformity_sigma: float = 5.0
    edge_length: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "technical_lines", tuple(float(f) for f in self.technical_lines))
        if not 0 < self.cl < 1:
            raise ConfigError("detection.cl must be in (0, 1)")
        if self.window_bins < 16:
            raise ConfigError("detection.window_bins must be >= 16")
        if self.trials < 100:
            raise ConfigError("detection.trials must be >= 100")
        if self.subset not in SUBSETS:
            raise ConfigError(f"detection.subset must be one of {SUBSETS}")
        if self.threshold_mode not in MODES:
            raise ConfigError(f"detection.threshold_mode must be one of {MODES}")

    def veto_policy(self, threshold, cfg):
        return VetoPolicy(
            threshold=float(threshold),
            window_bins=self.window_bins,
            technical_lines=self.technical_lines,
            line_tolerance_hz=self.line_tolerance_hz,
            uniformity_sigma=self.uniformity_sigma,
            subset=self.subset,
            cfg=cfg,
        )


@dataclass(frozen=True)
class PipelineConfig:
    run: RunSpec = field(default_factory=RunSpec)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    output_dir: str = "out"
    source: str = ""  # file the configuration was read from

    @property
    def seed(self):
        return self.run.seed

    def with_seed(self, seed):
        return replace(self, run=replace(self.run, seed=seed))

    def with_duration(self, duration):
        return replace(self, run=replace(self.run, duration=duration))

    def to_dict(self):
        return {
            "run": self.run.to_dict(),
            "spectral": dict(asdict(self.spectral), band=list(self.spectral.band)),
            "detection": dict(asdict(self.detection), technical_lines=list(self.detection.technical_lines)),
        }

    def config_hash(self):
        """SHA-256 of the analysis-relevant configuration (output location excluded)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _line_of(text, *keys):
    """Best-effort line number of the last key in a nested key path."""
    pos = 0
    for k in keys:
        m = re.compile(r'"%s"' % re.escape(str(k))).search(text, pos)
        if m is None:
            break
        pos = m.start()
    return text.count("\n", 0, pos) + 1 if pos else None


def _line_for_message(text, message, anchor):
    """Line of the most specific quoted token of ``message`` found in ``text`` (after ``anchor``)."""
    tokens = [t for t in re.findall(r"[A-Za-z_][\w.-]*", message) if f'"{t}"' in text]
    return _line_of(text, *anchor, *tokens) or _line_of(text, *anchor)


def _section(d, name, text, path):
    sec = d.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigFileError(f"'{name}' must be an object", path, _line_of(text, name))
    return sec


def _build(kind, sec, name, text, path):
    fields = set(kind.__dataclass_fields__)
    for k in sec:
        if k not in fields:
            raise ConfigFileError(f"unknown key '{name}.{k}'", path, _line_of(text, name, k))
    try:
        return kind(**sec)
    except (ConfigError, SpectralError, DomainError, TypeError, ValueError) as exc:
        raise ConfigFileError(f"{name}: {exc}", path, _line_for_message(text, str(exc), [name])) from exc


def parse_config(text, path=None, base_dir=None):
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigFileError(f"invalid JSON: {exc.msg} (column {exc.colno})", path, exc.lineno) from exc
    if not isinstance(d, dict):
        raise ConfigFileError("top level must be a JSON object", path, 1)
    for k in d:
        if k not in TOP_KEYS:
            raise ConfigFileError(f"unknown top-level key '{k}'", path, _line_of(text, k))
    if "run" in d and "run_spec" in d:
        raise ConfigFileError("give either 'run' or 'run_spec', not both", path, _line_of(text, "run_spec"))

    run_dict, run_text, run_path = d.get("run", {}), text, path
    if "run_spec" in d:
        ref = Path(d["run_spec"])
        if not ref.is_absolute():
            ref = Path(base_dir or ".") / ref
        if not ref.is_file():
            raise ConfigFileError(f"run_spec file not found: {ref}", path, _line_of(text, "run_spec"))
        run_text, run_path = ref.read_text(), str(ref)
        try:
            run_dict = json.loads(run_text)
        except json.JSONDecodeError as exc:
            raise ConfigFileError(f"invalid JSON: {exc.msg}", run_path, exc.lineno) from exc
    if not isinstance(run_dict, dict):
        raise ConfigFileError("'run' must be an object", path, _line_of(text, "run"))
    if "seed" in d:
        run_dict = dict(run_dict, seed=d["seed"])
    try:
        run = RunSpec.from_dict(run_dict)
    except (ConfigError, DomainError, TypeError, ValueError) as exc:
        anchor = ["run"] if run_text is text else []
        raise ConfigFileError(f"run: {exc}", run_path, _line_for_message(run_text, str(exc), anchor)) from exc

    spectral = _section(d, "spectral", text, path)
    if "band" in spectral:
        spectral = dict(spectral, band=tuple(spectral["band"]))
    spectral = _build(SpectralConfig, spectral, "spectral", text, path)
    detection = _build(DetectionConfig, _section(d, "detection", text, path), "detection", text, path)
    if spectral.band[1] > run.sample_rate / 2:
        raise ConfigFileError("spectral band exceeds the run's Nyquist frequency", path, _line_of(text, "spectral", "band"))
    return PipelineConfig(run, spectral, detection, str(d.get("output_dir", "out")), str(path or ""))


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigFileError("configuration file not found", str(path))
    return parse_config(path.read_text(), str(path), path.parent)


def default_config_text():
    """A complete configuration with every default spelled out."""
    cfg = PipelineConfig()
    d = cfg.to_dict()
    d["output_dir"] = cfg.output_dir
    return json.dumps(d, indent=2, sort_keys=True) + "\n"
