"""Command-line driver: config file in, CSV and report files out.

Subcommands::

    tcsim [--engine eigen_exact|krylov] run <config.yaml> [--output-dir DIR]
    tcsim sweep "<glob>" [--output-dir DIR] [--jobs N]
    tcsim ingest <file> --format two_column_csv [--header] [--fit gaussian|asymmetric]
    tcsim [--seed N] synth <out.csv> --y0 .. --Hc .. --W .. --A .. [--noise 0.01]
    tcsim presets

``<config>`` may also be the name of a bundled preset (``jcm_fig2``, ...).
The config schema is documented in README.md. Failures print one line to
stderr, ``error=<kind> exit=<code> reason=<text>``, and exit with

    2  config schema violation
    3  Hilbert space over capacity
    4  numerical failure (non-convergence, truncation, fit failure)
"""
from __future__ import annotations

import argparse
import concurrent.futures
import copy
import csv
import glob
import json
import math
import platform
import sys
import time
from importlib import metadata, resources
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import analytics
from .analytics import NoRevivalError, SpectrumTrace
from .errors import (CapacityError, ConfigError, ConvergenceError, CutoffError,
                     InsufficientDataError, TCSimError)
from .hamiltonian import SystemSpec, assemble_total
from .meanfield import MeanFieldConfig, MeanFieldState, integrate_mf
from .propagator import (EvolutionConfig, TimeSeries, coherent_amplitudes,
                         fock_amplitudes, observe, product_initial_state, revival_time,
                         trajectory)
from .units import parse_coupling, parse_frequency

EXIT_OK, EXIT_SCHEMA, EXIT_CAPACITY, EXIT_NUMERICAL = 0, 2, 3, 4

TOP_LEVEL_KEYS = {"name", "system", "evolution", "initial_state", "analyses",
                  "output_dir", "sweep", "meanfield"}
ANALYSES = ("collapse", "revival", "rabi_frequencies")
SWEEP_ANALYSES = ("peak_linearity", "amplitude_trend")


# --- config ----------------------------------------------------------------

def preset_names():
    return sorted(p.name[:-5] for p in resources.files("tcsim.presets").iterdir()
                  if p.name.endswith(".yaml"))


def resolve_config_path(ref) -> Path | None:
    """Filesystem path, or the bundled preset of that name."""
    p = Path(ref)
    if p.exists():
        return p
    if ref in preset_names():
        return Path(str(resources.files("tcsim.presets") / f"{ref}.yaml"))
    return None


def load_config(ref) -> dict:
    path = resolve_config_path(ref)
    if path is None:
        raise ConfigError(f"no config file or preset named {ref!r}")
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"unparseable YAML in {path}: {exc}".replace("\n", " ")) from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    cfg.setdefault("name", path.stem)
    validate_config(cfg)
    return cfg


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def validate_config(cfg: dict):
    unknown = set(cfg) - TOP_LEVEL_KEYS
    _require(not unknown, f"unknown top-level keys: {sorted(unknown)}")
    for key in ("system", "evolution", "initial_state"):
        _require(isinstance(cfg.get(key), dict), f"missing or non-mapping section '{key}'")
    _require(isinstance(cfg["system"].get("chain"), dict), "system.chain is required")
    _require("output_dir" in cfg, "output_dir is required")
    for key in ("t_max", "dt_sample"):
        _require(key in cfg["evolution"], f"evolution.{key} is required")
    analyses = cfg.get("analyses", []) or []
    _require(isinstance(analyses, list), "analyses must be a list")
    for i, a in enumerate(analyses):
        _require(isinstance(a, dict) and a.get("kind") in ANALYSES,
                 f"analyses[{i}]: kind must be one of {list(ANALYSES)}")
    sweep = cfg.get("sweep")
    if sweep is not None:
        _require(isinstance(sweep, dict), "sweep must be a mapping")
        _require(isinstance(sweep.get("parameter"), str), "sweep.parameter must be a dotted path")
        _require(isinstance(sweep.get("values"), list) and sweep["values"],
                 "sweep.values must be a non-empty list")
        an = sweep.get("analysis")
        _require(an is None or (isinstance(an, dict) and an.get("kind") in SWEEP_ANALYSES),
                 f"sweep.analysis.kind must be one of {list(SWEEP_ANALYSES)}")


def _set_dotted(cfg, dotted, value):
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"sweep parameter path {dotted!r} does not exist")
        node = node[k]
    if not isinstance(node, dict):
        raise ConfigError(f"sweep parameter path {dotted!r} does not exist")
    node[keys[-1]] = value


def _qubit_coeffs(spec, n_sites):
    if spec is None or spec == "ground":
        return [(1.0, 0.0)] * n_sites
    if spec == "excited":
        return [(0.0, 1.0)] * n_sites
    if isinstance(spec, list):
        pairs = [tuple(complex(parse_coupling(c)) for c in pair) for pair in spec]
        if len(pairs) == 1 and n_sites > 1:
            pairs = pairs * n_sites
        return pairs
    raise ConfigError(f"initial_state.qubits: cannot interpret {spec!r}")


def _field_state(spec, cutoff):
    """Local Fock amplitudes and the mean-field amplitude for one mode."""
    if spec is None:
        spec = {"kind": "vacuum"}
    kind = spec.get("kind")
    if kind == "vacuum":
        return fock_amplitudes(0, cutoff), 0.0
    if kind == "fock":
        n = int(spec["n"])
        if n > cutoff:
            raise ConfigError(f"Fock state n={n} exceeds cutoff {cutoff}")
        return fock_amplitudes(n, cutoff), (0.0 if n == 0 else None)
    if kind == "coherent":
        if "alpha" in spec:
            alpha = complex(parse_coupling(spec["alpha"]))
        elif "n_bar" in spec:
            alpha = complex(math.sqrt(float(spec["n_bar"])))
        else:
            raise ConfigError("coherent state needs 'alpha' or 'n_bar'")
        return coherent_amplitudes(alpha, cutoff), alpha
    raise ConfigError(f"unknown field state kind {kind!r}")


class Experiment:
    """A validated config turned into kernel objects."""

    def __init__(self, cfg: dict, engine=None):
        self.cfg = cfg
        try:
            self.spec = SystemSpec.from_dict(cfg["system"])
            ev = dict(cfg["evolution"])
            if engine is not None:
                ev["engine"] = engine
            self.evolution = EvolutionConfig(
                t_max=float(ev["t_max"]), dt_sample=float(ev["dt_sample"]),
                engine=ev.get("engine", "eigen_exact"),
                krylov_dim=int(ev.get("krylov_dim", 30)),
                step_tolerance=float(ev.get("step_tolerance", 1e-10)))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad system/evolution section: {exc!r}") from exc
        except CapacityError:
            raise
        except ValueError as exc:
            if isinstance(exc, TCSimError):
                raise
            raise ConfigError(str(exc)) from exc

    def initial_state(self):
        init = self.cfg["initial_state"]
        basis = self.spec.basis
        qubits = _qubit_coeffs(init.get("qubits"), self.spec.n_sites)
        fields, mf_alpha, mf_betas = {}, 0.0, []
        if self.spec.photon is not None:
            fields[basis.photon_mode], mf_alpha = _field_state(init.get("photon"),
                                                               self.spec.photon.cutoff)
        phonon_cfg = init.get("phonons") or []
        for q, mode in enumerate(self.spec.phonons):
            local, beta = _field_state(phonon_cfg[q] if q < len(phonon_cfg) else None, mode.cutoff)
            fields[self.spec.phonon_mode_index(q)] = local
            mf_betas.append(beta)
        try:
            psi = product_initial_state(basis, qubits, fields)
        except ValueError as exc:
            if isinstance(exc, TCSimError):
                raise
            raise ConfigError(f"initial_state: {exc}") from exc
        return psi, (qubits, mf_alpha, mf_betas)

    def photon_n_bar(self):
        ph = (self.cfg["initial_state"].get("photon") or {})
        if ph.get("kind") == "coherent":
            if "n_bar" in ph:
                return float(ph["n_bar"])
            return abs(complex(parse_coupling(ph["alpha"]))) ** 2
        if ph.get("kind") == "fock":
            return float(ph["n"])
        return 0.0

    def single_g(self):
        g = np.atleast_1d(self.spec.couplings.photon_couplings)
        return float(abs(g[0])) if g.size and np.allclose(g, g[0]) else None

    def detuning(self):
        if self.spec.photon is None:
            return 0.0
        return float(self.spec.chain.transition_freqs[0] - self.spec.photon.frequency)


# --- running -----------------------------------------------------------------

def simulate(exp: Experiment) -> TimeSeries:
    psi0, mf_init = exp.initial_state()
    H = assemble_total(exp.spec)
    rows = trajectory(H, psi0, exp.evolution)
    ts = observe(rows, exp.spec, exp.evolution.times(), H)
    mf = exp.cfg.get("meanfield")
    if mf:
        qubits, alpha, betas = mf_init
        if alpha is None or any(b is None for b in betas):
            raise ConfigError("meanfield needs coherent or vacuum field states")
        opts = mf if isinstance(mf, dict) else {}
        mcfg = MeanFieldConfig(integrator=opts.get("integrator", "rk45_adaptive"),
                               tolerance=float(opts.get("tolerance", 1e-11)),
                               dt=float(opts.get("dt", exp.evolution.dt_sample)),
                               dt_sample=exp.evolution.dt_sample)
        state0 = MeanFieldState.product(qubits, alpha, betas)
        mts = integrate_mf(state0, exp.spec, mcfg, exp.evolution.t_max)
        for name, values in mts.channels.items():
            ts.add(name, values)
    return ts


def _channel(ts, name):
    if name not in ts:
        raise ConfigError(f"analysis channel {name!r} not produced; have {list(ts.channels)}")
    return np.real(ts[name])


def run_analysis(request: dict, ts: TimeSeries, exp: Experiment):
    """Returns ``(report_name, report_text, summary)``."""
    kind = request["kind"]
    channel = request.get("channel", "sigma_z_mean")
    x = _channel(ts, channel)
    name = request.get("name", kind)
    if kind == "collapse":
        g = request.get("g", exp.single_g())
        g = None if g is None else float(parse_frequency(g))
        fit = analytics.fit_collapse_envelope(ts.times, x, g=g,
                                              t_window=request.get("t_window"),
                                              free_amplitude=bool(request.get("free_amplitude", False)))
        if g is not None:
            fit.extra["tau_c_expected"] = 1.0 / g
        return name, fit.to_report(), {"tau_c": fit.params["tau_c"], "t_1e": fit.params["t_1e"]}
    if kind == "revival":
        expected = request.get("expected", "auto")
        if expected == "auto":
            g, nb = exp.single_g(), exp.photon_n_bar()
            expected = revival_time(nb, g, exp.detuning()) if g and nb > 0 else None
        try:
            t_r, fit = analytics.estimate_revival_time(ts.times, x, expected=expected)
        except NoRevivalError as exc:
            return name, f"status=no_revival\nreason={exc}\n", {"t_revival": None}
        return name, "status=ok\n" + fit.to_report(), {"t_revival": t_r}
    if kind == "rabi_frequencies":
        peaks = analytics.extract_rabi_frequencies(ts.times, x,
                                                   max_peaks=int(request.get("max_peaks", 5)))
        lines = [f"n_peaks={len(peaks)}"]
        for i, pk in enumerate(peaks):
            lines += [f"peak{i}.frequency={pk.frequency:.17g}",
                      f"peak{i}.angular={pk.angular:.17g}",
                      f"peak{i}.amplitude={pk.amplitude:.17g}"]
        return name, "\n".join(lines) + "\n", {"peaks": [(p.angular, p.amplitude) for p in peaks]}
    raise ConfigError(f"unknown analysis kind {kind!r}")


def _band_peak(ts, request):
    """Strongest spectral peak whose angular frequency lies inside ``band``."""
    lo, hi = (float(parse_frequency(v)) for v in request.get("band", [0.0, math.inf]))
    x = _channel(ts, request.get("channel", "sigma_z_mean"))
    peaks = [p for p in analytics.extract_rabi_frequencies(ts.times, x, max_peaks=10)
             if lo <= p.angular <= hi]
    if not peaks:
        raise InsufficientDataError(f"no spectral peak inside band [{lo}, {hi}]")
    return peaks[0]


def run_sweep_analysis(request, values, series):
    kind = request["kind"]
    peaks = [_band_peak(ts, request) for ts in series]
    xs = np.abs(np.array([complex(parse_coupling(v)) for v in values]))
    lines = [f"kind={kind}", f"n_points={len(values)}"]
    for i, (v, p) in enumerate(zip(xs, peaks)):
        lines += [f"point{i}.parameter={v:.17g}", f"point{i}.angular={p.angular:.17g}",
                  f"point{i}.amplitude={p.amplitude:.17g}"]
    if kind == "peak_linearity":
        fit = analytics.linear_fit(xs, [p.angular for p in peaks], model="peak_vs_parameter")
        ok = fit.r_squared >= float(request.get("min_r_squared", 0.99))
        lines.append(fit.to_report().rstrip("\n"))
        lines.append(f"linear={'true' if ok else 'false'}")
        return "\n".join(lines) + "\n", {"r_squared": fit.r_squared, "slope": fit.params["slope"]}
    if kind == "amplitude_trend":
        order = np.argsort(xs)
        amps = np.array([peaks[i].amplitude for i in order])
        decreasing = bool(np.all(np.diff(amps) < 0))
        lines.append(f"monotone_decreasing={'true' if decreasing else 'false'}")
        return "\n".join(lines) + "\n", {"monotone_decreasing": decreasing,
                                         "amplitudes": amps.tolist()}
    raise ConfigError(f"unknown sweep analysis {kind!r}")


def _versions():
    out = {"python": platform.python_version(), "numpy": np.__version__,
           "scipy": scipy.__version__, "pyyaml": yaml.__version__}
    try:
        out["tcsim"] = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        out["tcsim"] = "unknown"
    return out


def _run_point(cfg, out_dir: Path, engine):
    exp = Experiment(cfg, engine)
    ts = simulate(exp)
    out_dir.mkdir(parents=True, exist_ok=True)
    ts.to_csv(out_dir / "timeseries.csv")
    summaries = {}
    for request in cfg.get("analyses", []) or []:
        name, text, summary = run_analysis(request, ts, exp)
        with open(out_dir / f"{name}.report", "w") as fh:
            fh.write(text)
        summaries[name] = summary
    return ts, summaries


def run_experiment(config, output_dir=None, engine=None) -> dict:
    """Run one config (path, preset name or already-loaded dict). Returns a summary dict.

    Raises the package's error types; :func:`main` maps them to exit codes.
    """
    cfg = load_config(config) if not isinstance(config, dict) else copy.deepcopy(config)
    if isinstance(config, dict):
        cfg.setdefault("name", "experiment")
        validate_config(cfg)
    out = Path(output_dir or cfg["output_dir"])
    start = time.perf_counter()
    summary = {"name": cfg["name"], "output_dir": str(out)}
    sweep = cfg.get("sweep")
    if sweep is None:
        _, summary["analyses"] = _run_point(cfg, out, engine)
    else:
        series, points = [], []
        for i, value in enumerate(sweep["values"]):
            point = copy.deepcopy(cfg)
            point.pop("sweep")
            _set_dotted(point, sweep["parameter"], value)
            ts, s = _run_point(point, out / f"point_{i:03d}", engine)
            series.append(ts)
            points.append({"value": value, "analyses": s})
        summary["points"] = points
        if sweep.get("analysis"):
            text, s = run_sweep_analysis(sweep["analysis"], sweep["values"], series)
            with open(out / f"{sweep['analysis']['kind']}.report", "w") as fh:
                fh.write(text)
            summary["sweep_analysis"] = s
    manifest = {"config": cfg, "versions": _versions(), "engine_override": engine,
                "wall_time_s": time.perf_counter() - start}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    summary["wall_time_s"] = manifest["wall_time_s"]
    return summary


# --- spectra ---------------------------------------------------------------

class SpectrumParseError(ConfigError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


def ingest_spectrum(path, format="two_column_csv", header=False) -> SpectrumTrace:
    """Read an ``abscissa,ordinate`` file; ``header=True`` skips the first line."""
    if format != "two_column_csv":
        raise ConfigError(f"unsupported spectrum format {format!r}")
    xs, ys, direction = [], [], 0.0
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if lineno == 1 and header:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise SpectrumParseError(path, lineno, f"expected 2 columns, got {len(row)}")
            try:
                x, y = float(row[0]), float(row[1])
            except ValueError:
                raise SpectrumParseError(path, lineno, f"non-numeric cell in {row!r}") from None
            if xs:
                step = x - xs[-1]
                if step == 0 or step * direction < 0:
                    raise SpectrumParseError(path, lineno, "abscissa is not strictly monotone")
                direction = direction or math.copysign(1.0, step)
            xs.append(x)
            ys.append(y)
    if not xs:
        raise SpectrumParseError(path, 1, "no data rows")
    return SpectrumTrace(np.array(xs), np.array(ys), {"source": str(path), "rows": len(xs)})


def synth_gaussian_spectrum(y0, Hc, W, A, H=None, noise=0.0, seed=None):
    """Noisy samples of the Gaussian envelope; noise is relative to the peak height."""
    if H is None:
        H = np.linspace(Hc - 4 * W, Hc + 4 * W, 401)
    y = analytics.gaussian_envelope(H, y0, Hc, W, A)
    if noise:
        rng = np.random.default_rng(seed)
        y = y + rng.normal(0.0, noise * A / W * analytics.SQRT_2_OVER_PI, size=y.size)
    return SpectrumTrace(H, y, {"source": "synthetic"})


def write_two_column(path, trace: SpectrumTrace):
    with open(path, "w", newline="") as fh:
        for x, y in zip(trace.abscissa, trace.ordinate):
            fh.write(f"{x:.17g},{y:.17g}\n")


# --- entry point -------------------------------------------------------------

def _fail(kind, code, reason):
    reason = " ".join(str(reason).split())
    print(f"error={kind} exit={code} reason={reason}", file=sys.stderr)
    return code


def _sweep_worker(args):
    path, out, engine = args
    try:
        s = run_experiment(path, out, engine)
        return path, EXIT_OK, s.get("wall_time_s")
    except Exception as exc:  # reported per config, the sweep carries on
        return path, _exit_code(exc), str(exc)


def _exit_code(exc):
    if isinstance(exc, ConfigError):
        return EXIT_SCHEMA
    if isinstance(exc, CapacityError):
        return EXIT_CAPACITY
    return EXIT_NUMERICAL


def build_parser():
    p = argparse.ArgumentParser(prog="tcsim", description=__doc__.split("\n")[0])
    p.add_argument("--engine", choices=["eigen_exact", "krylov"], default=None,
                   help="override evolution.engine")
    p.add_argument("--seed", type=int, default=None,
                   help="seed for synthetic-data noise (synth only)")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one config file or preset")
    r.add_argument("config")
    r.add_argument("--output-dir", default=None)
    s = sub.add_parser("sweep", help="run every config matching a glob, concurrently")
    s.add_argument("pattern")
    s.add_argument("--output-dir", default=None,
                   help="parent directory; each config gets <output-dir>/<config stem>")
    s.add_argument("--jobs", type=int, default=None)
    i = sub.add_parser("ingest", help="read a measured spectrum and optionally fit it")
    i.add_argument("file")
    i.add_argument("--format", default="two_column_csv", choices=["two_column_csv"])
    i.add_argument("--header", action="store_true", help="skip the first line")
    i.add_argument("--fit", choices=["gaussian", "asymmetric"], default=None)
    i.add_argument("--report", default=None, help="write the fit report here instead of stdout")
    y = sub.add_parser("synth", help="write a synthetic Gaussian-envelope spectrum")
    y.add_argument("output")
    for name in ("y0", "Hc", "W", "A"):
        y.add_argument(f"--{name}", type=float, required=True)
    y.add_argument("--noise", type=float, default=0.0, help="relative to peak height")
    y.add_argument("--points", type=int, default=401)
    sub.add_parser("presets", help="list bundled presets")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "presets":
            for n in preset_names():
                print(n)
            return EXIT_OK
        if args.command == "run":
            s = run_experiment(args.config, args.output_dir, args.engine)
            print(f"ok name={s['name']} output_dir={s['output_dir']} wall_time_s={s['wall_time_s']:.3f}")
            return EXIT_OK
        if args.command == "sweep":
            paths = sorted(glob.glob(args.pattern))
            if not paths:
                return _fail("config", EXIT_SCHEMA, f"no configs match {args.pattern!r}")
            jobs = [(pth, (str(Path(args.output_dir) / Path(pth).stem) if args.output_dir else None),
                     args.engine) for pth in paths]
            worst = EXIT_OK
            with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
                for pth, code, info in pool.map(_sweep_worker, jobs):
                    if code == EXIT_OK:
                        print(f"ok config={pth} wall_time_s={info:.3f}")
                    else:
                        _fail("sweep_item", code, f"{pth}: {info}")
                        worst = max(worst, code)
            return worst
        if args.command == "ingest":
            trace = ingest_spectrum(args.file, args.format, args.header)
            text = f"source={trace.source}\nrows={len(trace)}\n"
            if args.fit:
                fitter = {"gaussian": analytics.fit_gaussian_envelope,
                          "asymmetric": analytics.fit_asymmetric_gaussian}[args.fit]
                text += fitter(trace).to_report()
            if args.report:
                with open(args.report, "w") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        if args.command == "synth":
            H = np.linspace(args.Hc - 4 * args.W, args.Hc + 4 * args.W, args.points)
            trace = synth_gaussian_spectrum(args.y0, args.Hc, args.W, args.A, H,
                                            args.noise, args.seed)
            write_two_column(args.output, trace)
            return EXIT_OK
    except ConfigError as exc:
        return _fail("config", EXIT_SCHEMA, exc)
    except CapacityError as exc:
        return _fail("capacity", EXIT_CAPACITY, exc)
    except (ConvergenceError, CutoffError, InsufficientDataError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        return _fail("numerical", EXIT_NUMERICAL, exc)
    except OSError as exc:
        return _fail("io", EXIT_SCHEMA, exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
