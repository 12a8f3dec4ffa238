"""Experiment orchestration: configs, recipes, sweeps and on-disk outputs.

Layout of one experiment::

    output_dir/<recipe>/<model>_g<g>_N<N>/trajectory.csv
    output_dir/<recipe>/<model>_g<g>_N<N>/analysis.json
    output_dir/<recipe>/sweep.json      (cross-run fits, if requested)
    output_dir/<recipe>/manifest.json

Mean-field runs use ``Ninf`` in the run name.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .dimension import DimensionError, EmbeddingConfig, correlation_dimension, default_theiler_window, select_delay
from .fitting import (
    FitRejected,
    depletion_onset_time,
    fit_power_offset,
    fit_shifted_power,
    linear_fit,
    revival_time,
)
from .io import atomic_write_text, dumps_json, read_json, write_json, write_trajectory_csv
from .manybody import integrated_error_time, run_3ls
from .meanfield import RatchetParams, TimeSeries, integrate_dnls, integrate_gp3, stride_for_samples
from .zeroone import rabi_fmax, spectral_cutoff, zero_one_test

log = logging.getLogger(__name__)

WORKERS_ENV = "RATCHET_WORKERS"
MODELS = ("dnls", "gp3", "ls3")
ANALYSES = ("zero_one", "corrdim", "fits")
MANYBODY_ONLY = ("depletion", "fidelity")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


# --------------------------------------------------------------------------
# analysis protocols shared by recipes, CLI and tests


def stroboscopic(series: TimeSeries, period: float) -> TimeSeries:
    """Keep one sample per ``period`` (no-op if the series is already coarser)."""
    stride = int(round(period / series.dt))
    return series.decimate(stride) if stride > 1 else series


def classify_chaos(series: TimeSeries, params: RatchetParams, n_c: int = 100):
    """0-1 test on a mean-field observable.

    The record is sampled once per drive period, and the largest ``c`` is set
    from the smaller of ``2 phi / T_R`` and the frequency holding 99% of the
    spectral power.
    """
    s = stroboscopic(series, params.drive_period)
    f_max = min(rabi_fmax(params.rabi_period), spectral_cutoff(s, 0.99))
    f_max = min(f_max, 0.45 * s.sample_freq)
    return zero_one_test(s, f_max=f_max, n_c=n_c)


def estimate_d2(
    series: TimeSeries,
    *,
    n_samples: int | None = None,
    max_pairs: int | None = 500_000_000,
    seed: int = 0,
    dims_m: Sequence[int] = tuple(range(2, 13)),
    max_lag: int = 5000,
):
    """Correlation dimension with the delay from the mutual-information minimum
    and the Theiler window ``ceil(sqrt(N))``."""
    s = series
    if n_samples is not None and len(s) > 1.5 * n_samples:
        s = s.decimate(int(round(len(s) / n_samples)))
    n = len(s)
    choice = select_delay(s, min(max_lag, n // 10 - 1))
    cfg = EmbeddingConfig(
        delay_tau=choice.tau, theiler_w=default_theiler_window(n), dims_m=tuple(dims_m),
        max_pairs=max_pairs, seed=seed,
    )
    est = correlation_dimension(s, cfg)
    return est, choice


def meanfield_reference(params: RatchetParams, duration: float, dt_out: float, substeps: int = 50) -> TimeSeries:
    """3GP current on the grid ``k * dt_out`` (RK4 with ``substeps`` per output)."""
    tr = integrate_gp3(params, duration, dt=dt_out / substeps, sample_stride=substeps)
    return tr["current"]


def integrated_error_sweep(
    params: RatchetParams,
    N_values: Sequence[int],
    duration_TR: float = 200.0,
    dt_out_TR: float = 0.01,
    threshold: float = 0.1,
) -> list[dict]:
    """Threshold times (in T_R) of the cumulative current discrepancy for each N."""
    TR = params.rabi_period
    dto = dt_out_TR * TR
    mf = meanfield_reference(params, duration_TR * TR, dto)
    out = []
    for N in N_values:
        mb = run_3ls(params, N, duration_TR * TR, dto).series("current")
        ct = integrated_error_time(mb, mf, threshold, time_unit=TR)
        out.append({"N": int(N), "T_IE": ct.time / TR, "crossed": ct.crossed})
    return out


def onset_in_TR(dep: TimeSeries, params: RatchetParams) -> float:
    TR = params.rabi_period
    return depletion_onset_time(dep, time_unit=TR, margin=TR).time / TR


def revival_in_TR(fid: TimeSeries, params: RatchetParams, threshold: float = 0.75):
    r = revival_time(fid, threshold, burn_in_level=threshold, envelope_window=params.rabi_period)
    TR = params.rabi_period
    return r._replace(time=r.time / TR, start=r.start / TR, stop=r.stop / TR)


# --------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    model: tuple[str, ...] | str
    params: RatchetParams = field(default_factory=RatchetParams)
    g_values: Sequence[float] = (0.0,)
    N_values: Sequence[int] = ()
    duration: float = 10.0  # in Rabi periods
    observables: Sequence[str] = ("current",)
    analysis: Sequence[str] = ()
    output_dir: str = "output"
    name: str = "custom"
    n_samples: int = 20_000  # mean-field trajectory length
    dt_out: float = 0.01  # many-body output step, in Rabi periods
    pair_budget: int = 500_000_000
    seed: int = 0
    corrdim_samples: dict = field(default_factory=dict)  # observable -> target length
    full: bool = False

    def __post_init__(self):
        if isinstance(self.model, str):
            self.model = tuple(m.strip() for m in self.model.split(",") if m.strip())
        self.model = tuple(self.model)
        self.g_values = tuple(float(g) for g in self.g_values)
        self.N_values = tuple(int(n) for n in self.N_values)
        self.observables = tuple(self.observables)
        self.analysis = tuple(self.analysis)

    @property
    def models(self) -> tuple[str, ...]:
        return self.model

    def validate(self) -> "ExperimentConfig":
        if not self.model:
            raise ConfigError("model", "at least one model is required")
        for m in self.model:
            if m not in MODELS:
                raise ConfigError("model", f"unknown model {m!r}; choose from {MODELS}")
        if not self.g_values:
            raise ConfigError("g_values", "empty")
        if any(g < 0 or not math.isfinite(g) for g in self.g_values):
            raise ConfigError("g_values", "interaction strengths must be finite and >= 0")
        if "ls3" in self.model:
            if not self.N_values:
                raise ConfigError("N_values", "required for the ls3 model")
            if any(n < 1 for n in self.N_values):
                raise ConfigError("N_values", "particle numbers must be >= 1")
        if not self.duration > 0:
            raise ConfigError("duration", "must be > 0")
        if not self.observables:
            raise ConfigError("observables", "must not be empty")
        for ob in self.observables:
            if ob == "current":
                continue
            if ob.startswith("local_density") or ob.startswith("density"):
                if "dnls" not in self.model:
                    raise ConfigError("observables", f"{ob} is only available for the dnls model")
                site = _density_site(ob)
                if not 0 <= site < self.params.sites_L:
                    raise ConfigError("observables", f"site {site} outside the ring")
            elif ob in MANYBODY_ONLY:
                if "ls3" not in self.model:
                    raise ConfigError("observables", f"{ob} is only available for the ls3 model")
            else:
                raise ConfigError("observables", f"unknown observable {ob!r}")
        for a in self.analysis:
            if a not in ANALYSES:
                raise ConfigError("analysis", f"unknown analysis {a!r}; choose from {ANALYSES}")
        if self.n_samples < 100:
            raise ConfigError("n_samples", "must be >= 100")
        if not self.dt_out > 0:
            raise ConfigError("dt_out", "must be > 0")
        if self.pair_budget < 1000:
            raise ConfigError("pair_budget", "must be >= 1000")
        if not str(self.output_dir):
            raise ConfigError("output_dir", "empty path")
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["params"] = self.params.to_dict()
        d["model"] = list(self.model)
        for k in ("g_values", "N_values", "observables", "analysis"):
            d[k] = list(d[k])
        return d

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _density_site(ob: str) -> int:
    digits = "".join(ch for ch in ob if ch.isdigit())
    return int(digits) if digits else 3


@dataclass(frozen=True)
class RunSpec:
    model: str
    g: float
    N: int | None

    @property
    def run_id(self) -> str:
        return f"{self.model}_g{self.g:.4f}_N{'inf' if self.N is None else self.N}"


def plan_runs(config: ExperimentConfig) -> list[RunSpec]:
    runs = []
    for model in config.model:
        for g in config.g_values:
            if model == "ls3":
                runs.extend(RunSpec(model, g, N) for N in config.N_values)
            else:
                runs.append(RunSpec(model, g, None))
    return runs


# --------------------------------------------------------------------------
# recipes

G_SCAN = tuple(round(0.005 * k, 3) for k in range(69))  # 0 .. 0.34
TABLE_G = (0.03, 0.14, 0.34)

RECIPE_NAMES = ("fig3", "table1", "fig6", "fig7", "fig8", "fig9", "fig10")

# rough single-core wall times of the full protocols
FULL_RUNTIME = {
    "fig3": "about 1 h (69 g values x 2 models at 1000 T_R)",
    "table1": "1-2 h (nine correlation dimensions, density series at 10^6 samples)",
    "fig6": "many hours (69 g values x three correlation dimensions)",
    "fig7": "about 10 min (N = 2..40, three g values)",
    "fig8": "under 1 min",
    "fig9": "under 1 min",
    "fig10": "about 10 min",
}


def recipe(name: str, *, full: bool = False, output_dir: str = "output") -> ExperimentConfig:
    """Preset experiment for one figure or table; desk-scale unless ``full``."""
    dur = 1000.0 if full else 200.0
    n_full_N = tuple(range(2, 41, 2))
    n_desk_N = tuple(range(2, 25, 2))
    if name == "fig3":
        cfg = ExperimentConfig(
            ("gp3", "dnls"), g_values=G_SCAN, duration=dur, observables=("current", "density3"),
            analysis=("zero_one",), n_samples=int(dur * 42.2),
        )
    elif name in ("table1", "fig6"):
        cfg = ExperimentConfig(
            ("gp3", "dnls"), g_values=TABLE_G if name == "table1" else G_SCAN, duration=dur,
            observables=("current", "density3"), analysis=("corrdim",),
            n_samples=1_000_000 if full else 200_000,
            corrdim_samples={"current": 100_000 if full else 20_000, "density3": 1_000_000 if full else 200_000},
        )
    elif name == "fig7":
        cfg = ExperimentConfig(
            ("ls3",), g_values=TABLE_G, N_values=n_full_N if full else n_desk_N, duration=200.0,
            observables=("current",), analysis=("fits",),
        )
    elif name == "fig8":
        cfg = ExperimentConfig(
            ("ls3",), g_values=TABLE_G, N_values=(6, 12, 18), duration=100.0,
            observables=("current", "depletion"), analysis=(), dt_out=0.05,
        )
    elif name == "fig9":
        cfg = ExperimentConfig(
            ("ls3",), g_values=(0.03, 0.14), N_values=(6, 12, 18), duration=200.0 if full else 150.0,
            observables=("fidelity",), analysis=("fits",), dt_out=0.01,
        )
    elif name == "fig10":
        cfg = ExperimentConfig(
            ("ls3",), g_values=TABLE_G, N_values=n_full_N if full else n_desk_N, duration=100.0,
            observables=("depletion",), analysis=("fits",), dt_out=0.05,
        )
    else:
        raise ValueError(f"unknown recipe {name!r}; choose from {RECIPE_NAMES}")
    cfg.name = name
    cfg.output_dir = output_dir
    cfg.full = full
    return cfg.validate()


# --------------------------------------------------------------------------
# execution


def simulate(config: ExperimentConfig, run: RunSpec) -> dict[str, TimeSeries]:
    """Observables of one run, all on one time grid, keyed by CSV column name."""
    params = config.params.replace(coupling_g=run.g)
    TR = params.rabi_period
    duration = config.duration * TR
    if run.model == "ls3":
        mb = run_3ls(params, run.N, duration, config.dt_out * TR)
        return {ob: mb.series(ob) for ob in config.observables if ob in ("current",) + MANYBODY_ONLY}
    stride = stride_for_samples(duration, params.default_dt, config.n_samples)
    wanted = [ob for ob in config.observables if ob not in MANYBODY_ONLY]
    if run.model == "gp3":
        tr = integrate_gp3(params, duration, sample_stride=stride)
        return {"current": tr["current"]} if "current" in wanted else {}
    out = {}
    for ob in wanted:
        if ob == "current":
            continue
        site = _density_site(ob)
        tr = integrate_dnls(params, duration, sample_stride=stride, density_site=site)
        out[f"density{site}"] = tr[f"density{site}"]
        if "current" in wanted:
            out.setdefault("current", tr["current"])
    if "current" in wanted and "current" not in out:
        out["current"] = integrate_dnls(params, duration, sample_stride=stride)["current"]
    return dict(sorted(out.items(), key=lambda kv: kv[0] != "current"))


def analyze_run(config: ExperimentConfig, run: RunSpec, series: dict[str, TimeSeries]) -> dict:
    params = config.params.replace(coupling_g=run.g)
    TR = params.rabi_period
    result: dict = {"run": run.run_id, "model": run.model, "g": run.g, "N": run.N, "warnings": []}
    if "zero_one" in config.analysis and run.model != "ls3":
        result["zero_one"] = {}
        for name, s in series.items():
            r = classify_chaos(s, params)
            result["zero_one"][name] = {"K": r.K_median, "c_max": r.c_max, "n_c": r.n_c, "degenerate": r.degenerate}
    if "corrdim" in config.analysis and run.model != "ls3":
        result["corrdim"] = {}
        for name, s in series.items():
            target = config.corrdim_samples.get(name, config.corrdim_samples.get("density" if "density" in name else name))
            try:
                est, choice = estimate_d2(s, n_samples=target, max_pairs=config.pair_budget, seed=config.seed)
                d = est.to_dict()
                d["label"] = name
                if not choice.interior_minimum:
                    result["warnings"].append(f"{name}: mutual information has no interior minimum")
                result["corrdim"][name] = d
            except DimensionError as exc:
                result["corrdim"][name] = {"label": name, "error": str(exc)}
                result["warnings"].append(f"{name}: {exc}")
    if "fits" in config.analysis and run.model == "ls3":
        fits: dict = {}
        if "current" in series:
            mf = meanfield_reference(params, config.duration * TR, config.dt_out * TR)
            ct = integrated_error_time(series["current"], mf, 0.1, time_unit=TR)
            fits["T_IE"] = {"time_TR": ct.time / TR, "crossed": ct.crossed}
        if "depletion" in series:
            try:
                fits["onset"] = {"time_TR": onset_in_TR(series["depletion"], params)}
            except FitRejected as exc:
                fits["onset"] = {"time_TR": None, "error": str(exc)}
        if "fidelity" in series:
            r = revival_in_TR(series["fidelity"], params)
            fits["revival"] = {"time_TR": r.time if r.found else None, "found": r.found, "decayed": r.decayed}
        result["fits"] = fits
    return result


def _run_one(config: ExperimentConfig, run: RunSpec, root: Path, chash: str) -> dict:
    run_dir = root / run.run_id
    traj, ana = run_dir / "trajectory.csv", run_dir / "analysis.json"
    run_hash = hashlib.sha256(f"{chash}:{run.run_id}".encode()).hexdigest()[:16]
    entry = {"run": run.run_id, "files": [str(traj), str(ana)], "status": "ok", "warnings": [], "cached": False}
    if traj.exists() and ana.exists():
        try:
            prev = read_json(ana)
            if prev.get("run_hash") == run_hash:
                entry.update(cached=True, wall_time=0.0, warnings=prev.get("warnings", []))
                return entry
        except (OSError, json.JSONDecodeError):
            pass
    t0 = time.perf_counter()
    try:
        series = simulate(config, run)
        write_trajectory_csv(traj, series)
        analysis = analyze_run(config, run, series)
        analysis["run_hash"] = run_hash
        write_json(ana, analysis)
        entry["warnings"] = analysis["warnings"]
    except Exception as exc:  # a failed run must not abort the sweep
        entry.update(status="failed", error=f"{type(exc).__name__}: {exc}", files=[])
        log.debug("run %s failed\n%s", run.run_id, traceback.format_exc())
    entry["wall_time"] = round(time.perf_counter() - t0, 3)
    return entry


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(WORKERS_ENV, f"not an integer: {raw!r}") from None
    return max(1, n)


def sweep_fits(config: ExperimentConfig, runs: list[dict]) -> dict:
    """Fits across N for each g: convergence law, onset scaling, revival line."""
    out: dict = {}
    for g in config.g_values:
        rows = [r for r in runs if r.get("model") == "ls3" and r.get("g") == g and "fits" in r]
        if not rows:
            continue
        gkey = f"{g:.4f}"
        res: dict = {}
        N = np.array([r["N"] for r in rows], dtype=float)

        def collect(key):
            pts = [(n, r["fits"][key]["time_TR"]) for n, r in zip(N, rows)
                   if key in r["fits"] and r["fits"][key].get("time_TR") is not None]
            return np.array([p[0] for p in pts]), np.array([p[1] for p in pts])

        for key, fitter in (("T_IE", fit_power_offset), ("onset", fit_shifted_power), ("revival", linear_fit)):
            x, y = collect(key)
            if x.size >= 4 or (key == "revival" and x.size >= 3):
                try:
                    res[key] = fitter(x, y).to_dict()
                except (ValueError, np.linalg.LinAlgError) as exc:
                    res[key] = {"error": str(exc)}
                res[key]["N"] = x.tolist()
                res[key]["values"] = y.tolist()
        out[gkey] = res
    return out


def summary_tables(analyses: list[dict]) -> dict[str, str]:
    """Plot-ready CSV text: K vs g and D2 vs g, one row per (model, g, observable)."""
    k_rows, d_rows = [], []
    for a in sorted(analyses, key=lambda a: (a["model"], a["g"])):
        for ob, r in sorted(a.get("zero_one", {}).items()):
            k_rows.append(f"{a['model']},{a['g']!r},{ob},{r['K']!r},{int(r['degenerate'])}")
        for ob, r in sorted(a.get("corrdim", {}).items()):
            d2, err = (r["d2"], r["d2_err"]) if "d2" in r else (math.nan, math.nan)
            d_rows.append(f"{a['model']},{a['g']!r},{ob},{d2!r},{err!r}")
    out = {}
    if k_rows:
        out["zero_one.csv"] = "\n".join(["model,g,observable,K,degenerate"] + k_rows) + "\n"
    if d_rows:
        out["corrdim.csv"] = "\n".join(["model,g,observable,d2,d2_err"] + d_rows) + "\n"
    return out


@dataclass
class RunManifest:
    config_hash: str
    code_version: str
    runs: list[dict]
    path: Path | None = None
    summaries: list[str] = field(default_factory=list)

    @property
    def failed(self) -> list[str]:
        return [r["run"] for r in self.runs if r["status"] != "ok"]

    @property
    def ok(self) -> bool:
        return not self.failed

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "runs": self.runs,
            "summaries": self.summaries,
            "failed": self.failed,
            "warnings": [w for r in self.runs for w in r.get("warnings", [])],
        }


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> RunManifest:
    """Run every (model, g, N) of ``config`` and write outputs plus a manifest.

    Runs whose outputs already exist for the same config hash are skipped.
    Failures are recorded in the manifest rather than raised.
    """
    config.validate()
    chash = config.config_hash()
    root = Path(config.output_dir) / config.name
    root.mkdir(parents=True, exist_ok=True)
    runs = plan_runs(config)
    workers = worker_count() if workers is None else max(1, workers)
    if workers == 1 or len(runs) == 1:
        entries = [_run_one(config, r, root, chash) for r in runs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(pool.map(_run_one, [config] * len(runs), runs, [root] * len(runs), [chash] * len(runs)))
    analyses = []
    for e in entries:
        if e["status"] == "ok":
            analyses.append(read_json(Path(e["files"][1])))
    summaries = []
    if "fits" in config.analysis and "ls3" in config.model:
        summaries.append(write_json(root / "sweep.json", sweep_fits(config, analyses)))
    for fname, text in summary_tables(analyses).items():
        summaries.append(atomic_write_text(root / fname, text))
    summaries.append(write_json(root / "config.json", config.to_dict()))
    manifest = RunManifest(chash, __version__, entries, root / "manifest.json", [str(p) for p in summaries])
    write_json(manifest.path, manifest.to_dict())
    return manifest


def manifest_is_complete(path) -> bool:
    """Every file listed in a manifest exists and parses."""
    data = read_json(path)
    files = [f for entry in data["runs"] for f in entry["files"]] + data.get("summaries", [])
    for f in files:
        p = Path(f)
        if not p.exists():
            return False
        if p.suffix == ".json":
            read_json(p)
        elif p.suffix == ".csv":
            with open(p) as fh:
                header, first = fh.readline(), fh.readline()
            if "," not in header or not first:
                return False
    return True


__all__ = [
    "ConfigError", "ExperimentConfig", "RunManifest", "RunSpec", "recipe", "run_experiment",
    "classify_chaos", "estimate_d2", "integrated_error_sweep", "onset_in_TR", "revival_in_TR",
    "plan_runs", "simulate", "analyze_run", "sweep_fits", "summary_tables", "worker_count", "dumps_json",
]
