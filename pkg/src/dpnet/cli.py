"""``dpnet`` command-line entry point.

Exit codes: 0 success, 1 acceptance-criterion failure, 2 usage or
configuration error, 3 data-integrity error (corrupt or missing data).
"""

from __future__ import annotations

import argparse
import asyncio
import hashlib
import io
import json
import logging
import sys
import warnings
import zipfile
from pathlib import Path

import numpy as np

from . import __version__, constants
from .config import ConfigFileError, PipelineConfig, load_config
from .correlator import SpectralError, all_pair_spectra, network_average, run_segment_spectra
from .detect import (
    NoiseModel,
    VetoContext,
    exclusion_curve,
    find_candidates,
    inject_and_recover,
    mc_threshold,
    snr_spectrum,
    veto_candidates,
)
from .physics import DomainError, DpdmParams
from .reproduce import FULL, REDUCED, STAGES, reproduce, table_csv, write_report
from .simnet import ConfigError, generate_run
from .wire import CollectorError, CorruptFileError, NodeError, read_run, run_collector, run_node, write_run
from .wire.runfile import resolve

EXIT_OK, EXIT_CRITERION, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3
FIXED_ZIP_TIME = (1980, 1, 1, 0, 0, 0)
log = logging.getLogger("dpnet")


class DataError(Exception):
    """Missing or unusable upstream data (exit code 3)."""


class UsageError(Exception):
    """Bad flag values that argparse cannot catch (exit code 2)."""


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _fraction(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError("must be strictly between 0 and 1")
    return v


def _endpoint(text):
    host, sep, port = text.rpartition(":")
    if not sep or not host or not port.isdigit() or not 0 <= int(port) < 65536:
        raise argparse.ArgumentTypeError("endpoint must be HOST:PORT")
    return host, int(port)


def _count(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _config(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "duration", None) is not None:
        cfg = cfg.with_duration(args.duration)
    return cfg


def _out(args, cfg):
    out = Path(args.out) if getattr(args, "out", None) else resolve(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _meta(cfg, **extra):
    return {"tool_version": __version__, "config_hash": cfg.config_hash(), **extra}


def _write_json(path, obj):
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_run(args, cfg):
    path = resolve(args.run)
    if not path.is_file():
        raise DataError(f"run file not found: {path}")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        run = read_run(path, cfg.run.spec_hash())
    for w in caught:
        log.warning("%s", w.message)
    if len(run) < 2:
        raise DataError("run has fewer than two sensors")
    return run


def _npz_bytes(arrays):
    """``.npz`` container with fixed member timestamps, so equal arrays give equal bytes."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            member = io.BytesIO()
            np.lib.format.write_array(member, np.asarray(arrays[name]), allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", FIXED_ZIP_TIME), member.getvalue())
    return buf.getvalue()


# --------------------------------------------------------------------------- subcommands


def cmd_constants(args):
    cfg = _config(args)
    text = json.dumps(_meta(cfg, constants=constants.table()), sort_keys=True, indent=2) + "\n"
    if args.out:
        out = _out(args, cfg)
        (out / "constants.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args):
    cfg = _config(args)
    out = _out(args, cfg)
    run = generate_run(cfg.run)
    path = write_run(run, out / args.name)
    side = _meta(
        cfg,
        spec_hash=cfg.run.spec_hash(),
        run_id=run.run_id,
        n_sensors=len(run),
        n_samples=run.n_samples,
        sha256=_sha256(path),
        run_spec=cfg.run.to_dict(),
    )
    _write_json(path.with_name(path.name + ".json"), side)
    print(f"{path} sha256={side['sha256']}")
    return EXIT_OK


def cmd_serve(args):
    cfg = _config(args)
    run = _load_run(args, cfg)
    host, port = args.endpoint
    rep = asyncio.run(run_node(run.records, host, port, args.chunk_size, args.retries))
    print(json.dumps(_meta(cfg, frames_sent=rep.frames_sent, attempts=rep.attempts, acked=len(rep.acked)), sort_keys=True))
    return EXIT_OK


def cmd_collect(args):
    cfg = _config(args)
    out = _out(args, cfg)
    host, port = args.endpoint
    expected = [(s.station_id, s.sensor_id) for s in cfg.run.sensors]
    couplings = {(s.station_id, s.sensor_id): s.coupling_factor for s in cfg.run.sensors}
    run = asyncio.run(
        run_collector(
            host,
            port,
            expected,
            args.tolerance,
            args.deadline,
            on_ready=lambda p: print(f"listening on {host}:{p}", flush=True),
            run_id=cfg.run.run_id(),
            spec_hash=cfg.run.spec_hash(),
            couplings=couplings,
        )
    )
    path = write_run(run, out / args.name)
    _write_json(path.with_name(path.name + ".json"), _meta(cfg, run_id=run.run_id, n_sensors=len(run), n_samples=run.n_samples, sha256=_sha256(path)))
    print(f"{path} sha256={_sha256(path)}")
    return EXIT_OK


def cmd_correlate(args):
    cfg = _config(args)
    out = _out(args, cfg)
    run = _load_run(args, cfg)
    pairs = all_pair_spectra(run, cfg.spectral)
    avg = network_average(pairs, cfg.detection.subset, sigma_window=cfg.detection.window_bins)
    meta = _meta(cfg, run_id=run.run_id, n_segments=avg.n_segments, subset=avg.subset_label, sample_rate=run.sample_rate)
    arrays = {
        "frequencies": avg.frequencies,
        "pair_labels": np.array([p.label for p in pairs]),
        "pair_same_station": np.array([p.same_station for p in pairs]),
        "pair_coupling": np.array([p.coupling for p in pairs]),
        "pair_values": np.stack([p.values for p in pairs]),
        "mean_real": avg.mean_real,
        "mean_imag": avg.mean_imag,
        "bin_sigma": avg.bin_sigma,
        "meta": np.array(json.dumps(meta, sort_keys=True)),
    }
    (out / "spectra.npz").write_bytes(_npz_bytes(arrays))
    rows = zip(avg.frequencies, avg.mean_real, avg.bin_sigma)
    (out / "network.csv").write_text(table_csv(("frequency", "mean_real", "bin_sigma"), rows, cfg.config_hash()))
    print(f"{len(pairs)} pair spectra, {avg.frequencies.size} bins -> {out / 'spectra.npz'}")
    return EXIT_OK


def _threshold(cfg, run, X, trials, cl, seed):
    model = NoiseModel.from_run(run, cfg.spectral, X)
    return mc_threshold(model, trials, cl, cfg.detection.subset, cfg.detection.window_bins, cfg.detection.threshold_mode, seed=seed)


def cmd_scan(args):
    cfg = _config(args)
    out = _out(args, cfg)
    run = _load_run(args, cfg)
    det = cfg.detection
    cl = args.cl if args.cl is not None else det.cl
    trials = args.trials or det.trials
    X = run_segment_spectra(run, cfg.spectral)
    pairs = all_pair_spectra(run, cfg.spectral, segment_cache=X)
    avg = network_average(pairs, det.subset, sigma_window=det.window_bins)
    thr = _threshold(cfg, run, X, trials, cl, cfg.seed)
    cands = find_candidates(snr_spectrum(avg, det.window_bins), thr, det.edge_length)
    if cands and not args.no_veto:
        policy = det.veto_policy(thr.value, cfg.spectral)
        ctx = VetoContext.from_run(run, policy, pairs=pairs, segment_cache=X)
        cands = veto_candidates(cands, policy=policy, context=ctx)
    header = _meta(cfg, type="header", run_id=run.run_id, threshold=thr.value, cl=cl, trials=trials, mode=thr.mode, n_bins=int(avg.frequencies.size), n_candidates=len(cands))
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(dict(c.to_json(), type="candidate"), sort_keys=True) for c in cands]
    (out / "candidates.jsonl").write_text("\n".join(lines) + "\n")
    n_pass = sum(c.veto_status == "passed" for c in cands)
    print(f"threshold {thr.value:.4f}: {len(cands)} candidates, {n_pass} surviving vetoes")
    return EXIT_OK


def cmd_inject(args):
    cfg = _config(args)
    out = _out(args, cfg)
    run = _load_run(args, cfg)
    det = cfg.detection
    if len(args.frequency) != len(args.epsilon):
        raise UsageError("give one --epsilon per --frequency")
    try:
        params = [DpdmParams(f, e) for f, e in zip(args.frequency, args.epsilon)]
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    cl = args.cl if args.cl is not None else det.cl
    thr = _threshold(cfg, run, run_segment_spectra(run, cfg.spectral), args.trials or det.trials, cl, cfg.seed)
    recs = inject_and_recover(run, params, cfg.spectral, thr, det.edge_length, det.subset, det.window_bins)
    result = _meta(
        cfg,
        run_id=run.run_id,
        threshold=thr.value,
        recoveries=[
            {
                "frequency": r.frequency,
                "bin_frequency": r.bin_frequency,
                "injected_epsilon": r.injected_epsilon,
                "recovered_epsilon": r.recovered_epsilon,
                "snr": r.snr,
                "injection_snr": r.injection_snr,
                "detected": r.detected,
            }
            for r in recs
        ],
    )
    _write_json(out / "injection.json", result)
    for r in recs:
        state = "detected" if r.detected else "not detected"
        print(f"{r.frequency} Hz: injected {r.injected_epsilon:.3e} recovered {r.recovered_epsilon:.3e} ({state}, SNR {r.snr:.1f})")
    return EXIT_OK


def cmd_limits(args):
    cfg = _config(args)
    out = _out(args, cfg)
    run = _load_run(args, cfg)
    det = cfg.detection
    cl = args.cl if args.cl is not None else det.cl
    avg = network_average(all_pair_spectra(run, cfg.spectral), det.subset, sigma_window=det.window_bins)
    curve = exclusion_curve(avg, det.edge_length, cl, run_id=run.run_id, config_hash=cfg.config_hash(), tool_version=__version__)
    (out / "limits.csv").write_text(curve.to_csv())
    (out / "limits.provenance.json").write_text(curve.provenance_json())
    print(f"{curve.frequencies.size} bins, min epsilon_{int(round(cl * 100))} = {curve.epsilon_95.min():.3e}")
    return EXIT_OK


def cmd_reproduce(args):
    cfg = _config(args)
    out = _out(args, cfg)
    scale = REDUCED if args.reduced else FULL
    stages = tuple(args.stages) if args.stages else STAGES
    seed = args.seed if args.seed is not None else cfg.seed
    results = reproduce(scale, seed, stages, log=lambda m: print(m, file=sys.stderr, flush=True))
    report = write_report(results, out, scale, seed, cfg.config_hash())
    for res in results:
        for c in res.checks:
            print(c.line())
    if not report["passed"]:
        failed = sorted({f"{c['criterion']}" for c in report["criteria"] if not c["passed"]}, key=int)
        print(f"FAILED criteria: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CRITERION
    return EXIT_OK


PLOT_SCHEMAS = {
    "sensitivity.csv": ("fig_sensitivity.csv", ("N", "fT_per_sqrtHz")),
    "limits.csv": ("fig_limits.csv", ("mass_eV", "epsilon_95")),
    "snr_histogram.csv": ("fig_snr_histogram.csv", ("snr_bin", "count", "subset_label")),
}


def _read_table(path):
    lines = path.read_text().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    return comments, body


def cmd_export_plots(args):
    cfg = _config(args)
    src = Path(args.artifacts)
    out = Path(args.out) if args.out else src / "plots"
    missing = [name for name in PLOT_SCHEMAS if not (src / name).is_file()]
    if missing:
        raise DataError(f"missing upstream artifact(s) in {src}: {', '.join(missing)}")
    out.mkdir(parents=True, exist_ok=True)
    index = {}
    for name, (target, columns) in PLOT_SCHEMAS.items():
        comments, body = _read_table(src / name)
        if not body or tuple(body[0].split(",")) != columns:
            raise DataError(f"{name}: expected columns {','.join(columns)}")
        upstream = comments[0][1:].strip() if comments else ""
        text = f"# config_hash={cfg.config_hash()} version={__version__} source={name} {upstream}\n" + "\n".join(body) + "\n"
        (out / target).write_text(text)
        index[target] = {"columns": list(columns), "rows": len(body) - 1, "sha256": hashlib.sha256(text.encode()).hexdigest()}
    _write_json(out / "index.json", _meta(cfg, files=index))
    print(f"wrote {len(index)} plot tables to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(
        prog="dpnet",
        description="Simulate, stream, correlate and search a magnetometer network for dark-photon dark matter.",
        epilog="exit codes: 0 ok, 1 criterion failure, 2 usage or config error, 3 data-integrity error",
        allow_abbrev=False,
    )
    p.add_argument("--version", action="version", version=f"dpnet {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help, config=True, out=True, seed=False, run=False, trials=False, cl=False, endpoint=False):
        sp = sub.add_parser(name, help=help, description=help, allow_abbrev=False)
        if config:
            sp.add_argument("--config", metavar="PATH", help="pipeline configuration JSON (defaults built in)")
        if out:
            sp.add_argument("--out", metavar="DIR", help="output directory (default: config output_dir)")
        if seed:
            sp.add_argument("--seed", type=_u64, metavar="U64", help="override the run seed")
        if run:
            sp.add_argument("--run", metavar="PATH", default="run.amlr", help="input run file; relative paths use $DPNET_DATA_DIR (default: run.amlr)")
        if trials:
            sp.add_argument("--trials", type=_count, metavar="N", help="Monte-Carlo trials for the threshold (>= 100)")
        if cl:
            sp.add_argument("--cl", type=_fraction, metavar="FRACTION", help="confidence level, e.g. 0.95")
        if endpoint:
            sp.add_argument("--endpoint", type=_endpoint, required=True, metavar="HOST:PORT", help="collector address")
        sp.set_defaults(func=fn)
        return sp

    add("constants", cmd_constants, "print the physical constants and unit conversions as JSON")

    sp = add("simulate", cmd_simulate, "simulate a network run and write it as a run file", seed=True)
    sp.add_argument("--duration", type=float, metavar="SECONDS", help="override the run duration (0 gives an empty run)")
    sp.add_argument("--name", default="run.amlr", help="output file name (default: run.amlr)")

    sp = add("serve", cmd_serve, "stream a run file to a collector (sensor-node side)", out=False, run=True, endpoint=True)
    sp.add_argument("--chunk-size", type=_count, default=4096, metavar="N", help="samples per frame (default: 4096)")
    sp.add_argument("--retries", type=int, default=5, metavar="N", help="reconnect attempts (default: 5)")

    sp = add("collect", cmd_collect, "receive node streams, align them and write a run file", endpoint=True)
    sp.add_argument("--deadline", type=float, default=None, metavar="SECONDS", help="give up after this long")
    sp.add_argument("--tolerance", type=float, default=10e-6, metavar="SECONDS", help="allowed start-grid misalignment (default: 1e-5)")
    sp.add_argument("--name", default="collected.amlr", help="output file name (default: collected.amlr)")

    add("correlate", cmd_correlate, "compute all pair cross-spectra and their network average", run=True)

    sp = add("scan", cmd_scan, "threshold the SNR spectrum, list candidates and apply vetoes", seed=True, run=True, trials=True, cl=True)
    sp.add_argument("--no-veto", action="store_true", help="skip the veto battery")

    sp = add("inject", cmd_inject, "inject dark-photon tones and report the recovered mixing", seed=True, run=True, trials=True, cl=True)
    sp.add_argument("--frequency", type=float, action="append", required=True, metavar="HZ", help="tone frequency (repeatable)")
    sp.add_argument("--epsilon", type=float, action="append", required=True, metavar="EPS", help="kinetic mixing (one per --frequency)")

    add("limits", cmd_limits, "compute the exclusion curve (CSV plus provenance JSON)", run=True, cl=True)

    sp = add("reproduce-paper", cmd_reproduce, "run the desk-scale reproduction and report every acceptance criterion", seed=True)
    sp.add_argument("--reduced", action="store_true", help="200 s runs and fewer seeds (smoke scale)")
    sp.add_argument("--stages", nargs="+", choices=STAGES, metavar="STAGE", help=f"subset of stages: {', '.join(STAGES)}")

    sp = add("export-plots", cmd_export_plots, "convert reproduction artifacts into plot-ready tables")
    sp.add_argument("--artifacts", required=True, metavar="DIR", help="directory holding sensitivity.csv, limits.csv, snr_histogram.csv")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigFileError, ConfigError, SpectralError, DomainError, UsageError) as exc:
        print(f"dpnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorruptFileError, CollectorError, NodeError, DataError) as exc:
        print(f"dpnet {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
