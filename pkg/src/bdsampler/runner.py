"""Experiment orchestration: strict JSON configuration, named presets,
seeded replication, and persistence of run records as CSV + SVG + manifest.

Replicate RNG streams derive from (master seed, replicate index), so a rerun
with the same config and seed is byte-identical in every CSV regardless of
how many worker processes execute it.
"""

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__, meanfield, reports
from .errors import ConfigError
from .kernels import KernelSpec
from .metrics import mmd2, observable_error
from .particles import particle_run
from .records import ReplicateResult, RunRecord
from .targets import (GMM_BENCHMARK_INIT_COV, GMM_BENCHMARK_INIT_MEAN,
                      GMM_BENCHMARK_OBSERVABLE, LogisticPosterior,
                      gmm_benchmark_target, load_dataset, train_test_split)

PRESETS = {
    "torus_decay": {
        "description": "mean-field KL and chi-squared flows on the bimodal "
                       "torus potential with theoretical decay envelopes",
        "defaults": {"n_grid": 1024, "dt": 1e-3, "t_final": 15.0,
                     "record_every": 10, "potential": "bimodal_sine",
                     "seed": 0, "replicates": 1},
    },
    "eps_scaling": {
        "description": "terminal bias of the kernel-regularized flow over a "
                       "bandwidth ladder, with log-log slope fits",
        "defaults": {"n_grid": 1024, "dt": 1e-3, "t_final": 15.0,
                     "record_every": 10, "potential": "bimodal_sine",
                     "eps_ladder": [0.05, 0.1, 0.2, 0.3, 0.4],
                     "seed": 0, "replicates": 1},
    },
    "gmm_particles": {
        "description": "four sampler families on the four-mode planar "
                       "Gaussian mixture, tracking observable error and MMD",
        "defaults": {"n_particles": 800, "dt": 1e-3, "t_final": 10.0,
                     "epsilon": 0.2, "thinning": 100,
                     "algorithms": ["ula", "svgd", "bdls_kl", "bdls_chi2"],
                     "seed": 0, "replicates": 10},
    },
    "bayes_logreg": {
        "description": "Bayesian logistic-regression posterior benchmark: "
                       "splitting sampler vs Stein descent, test accuracy "
                       "and predictive log-likelihood",
        "defaults": {"dataset": None, "dataset_format": "csv",
                     "n_particles": 500, "dt": 1e-3, "t_final": 15.0,
                     "epsilon": 0.5, "thinning": 100,
                     "algorithms": ["bdls_kl", "svgd"],
                     "standardize": True, "add_intercept": True,
                     "test_fraction": 0.2, "prior_rate": 0.01,
                     "seed": 0, "replicates": 1},
    },
    "custom": {
        "description": "single mean-field trajectory with a chosen dynamics "
                       "and torus potential",
        "defaults": {"dynamics": "bd", "n_grid": 256, "dt": 1e-3,
                     "t_final": 1.0, "record_every": 10,
                     "potential": "bimodal_sine", "epsilon": 0.2,
                     "seed": 0, "replicates": 1},
    },
}

_POSITIVE = {"n_grid", "dt", "t_final", "epsilon", "n_particles", "thinning",
             "record_every", "test_fraction", "prior_rate"}
_ALGOS = ("ula", "svgd", "bdls_kl", "bdls_chi2")
_POTENTIALS = ("bimodal_sine", "uniform")
_DYNAMICS = ("bd", "bd2", "bde", "bdls")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated preset name plus its fully-defaulted parameter map."""

    preset: str
    params: dict

    def as_dict(self):
        return {"preset": self.preset, **self.params}

    def to_json(self):
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def validate_config(doc):
    """Validate a raw config mapping; every violation is reported at once."""
    errors = []
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    preset = doc.get("preset")
    if preset not in PRESETS:
        raise ConfigError(
            f"unknown or missing preset {preset!r}; choose from {sorted(PRESETS)}"
        )
    defaults = PRESETS[preset]["defaults"]
    allowed = set(defaults) | {"preset", "out_dir"}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        errors.append(f"unknown keys for preset {preset}: {unknown}")
    params = dict(defaults)
    params.update({k: v for k, v in doc.items() if k in defaults or k == "out_dir"})

    for key in sorted(_POSITIVE & set(params)):
        val = params[key]
        if not isinstance(val, (int, float)) or isinstance(val, bool) or val <= 0:
            errors.append(f"{key} must be a positive number, got {val!r}")
    for key in ("n_grid", "n_particles", "thinning", "record_every"):
        if key in params and isinstance(params[key], float):
            if params[key] != int(params[key]):
                errors.append(f"{key} must be an integer, got {params[key]!r}")
            else:
                params[key] = int(params[key])
    if not isinstance(params.get("seed"), int) or isinstance(params.get("seed"), bool) \
            or params["seed"] < 0:
        errors.append(f"seed must be a nonnegative integer, got {params.get('seed')!r}")
    if not isinstance(params.get("replicates"), int) or params["replicates"] < 1:
        errors.append(f"replicates must be an integer >= 1, got {params.get('replicates')!r}")
    if "potential" in params and params["potential"] not in _POTENTIALS:
        errors.append(f"potential must be one of {_POTENTIALS}, got {params['potential']!r}")
    if "dynamics" in params and params["dynamics"] not in _DYNAMICS:
        errors.append(f"dynamics must be one of {_DYNAMICS}, got {params['dynamics']!r}")
    if "algorithms" in params:
        algos = params["algorithms"]
        if (not isinstance(algos, list) or not algos
                or any(a not in _ALGOS for a in algos)):
            errors.append(f"algorithms must be a nonempty subset of {_ALGOS}")
    if "eps_ladder" in params:
        ladder = params["eps_ladder"]
        if (not isinstance(ladder, list) or not ladder
                or any(not isinstance(e, (int, float)) or e <= 0 for e in ladder)):
            errors.append("eps_ladder must be a nonempty list of positive numbers")
    if preset == "bayes_logreg" and not params.get("dataset"):
        errors.append("bayes_logreg requires a dataset path")
    if "test_fraction" in params and not (0.0 < params["test_fraction"] < 1.0):
        errors.append(f"test_fraction must lie in (0, 1), got {params['test_fraction']!r}")
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return ExperimentConfig(preset=preset, params=params)


def load_config(path):
    """Parse and validate a JSON config file (strict schema, exhaustive
    error reporting)."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise ConfigError(
            f"cannot parse {path}: {err.msg} at line {err.lineno} column {err.colno}"
        ) from err
    return validate_config(doc)


def _worker_count(n_tasks):
    # BDSAMPLER_THREADS caps replicate parallelism; the default is one
    # worker per available core.
    env = os.environ.get("BDSAMPLER_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


def _map_tasks(fn, tasks):
    workers = _worker_count(len(tasks))
    if workers <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*tasks)))


# ---------------------------------------------------------------------------
# Gaussian-mixture particle experiment.


def _gmm_replicate(params, algorithm, replicate):
    target = gmm_benchmark_target()
    kernel = KernelSpec(float(params["epsilon"]), 2)
    mmd_kernel = KernelSpec(1.0, 2)
    chol = np.linalg.cholesky(GMM_BENCHMARK_INIT_COV)

    def init(n, rng):
        return GMM_BENCHMARK_INIT_MEAN + rng.standard_normal((n, 2)) @ chol.T

    recorders = {
        "observable_error": lambda e: observable_error(
            e, target, GMM_BENCHMARK_OBSERVABLE),
        "mmd2": lambda e: mmd2(e, target, mmd_kernel),
    }
    out = particle_run(algorithm, target, int(params["n_particles"]),
                       float(params["dt"]), float(params["t_final"]),
                       seed=int(params["seed"]), replicate=replicate,
                       kernel=kernel, init_sampler=init, recorders=recorders,
                       thinning=int(params["thinning"]))
    return ReplicateResult(label=f"{algorithm}/rep{replicate}", seed=replicate,
                           series=out["series"],
                           finals={"positions": out["final"].positions,
                                   "n_clipped": out["n_clipped"]})


def run_gmm_particles(params, out_dir=None):
    t0 = time.perf_counter()
    records = []
    for algorithm in params["algorithms"]:
        tasks = [(params, algorithm, rep) for rep in range(params["replicates"])]
        reps = _map_tasks(_gmm_replicate, tasks)
        records.append(RunRecord(
            config={**params, "algorithm": algorithm}, replicates=reps,
            master_seed=params["seed"], version=__version__,
            wall_clock=time.perf_counter() - t0,
            summary=_final_means(reps, ("observable_error", "mmd2")),
        ))
    if out_dir is not None:
        emit_particle_records(records, out_dir, provenance=(
            "four-mode planar Gaussian mixture benchmark: alternating "
            "Langevin/birth-death samplers vs plain Langevin and Stein descent"))
    return records


def _final_means(reps, metrics):
    out = {}
    for metric in metrics:
        out[f"final_mean_{metric}"] = float(
            np.mean([r.series[metric][-1] for r in reps]))
    return out


# ---------------------------------------------------------------------------
# Bayesian logistic-regression benchmark.


def _bayes_replicate(params, algorithm, replicate, x_train, y_train, x_test,
                     y_test):
    posterior = LogisticPosterior(x_train, y_train,
                                  prior_rate=params["prior_rate"],
                                  add_intercept=params["add_intercept"])
    kernel = KernelSpec(float(params["epsilon"]), posterior.dim)
    recorders = {
        "accuracy": lambda e: posterior.accuracy(e.positions, x_test, y_test),
        "log_likelihood": lambda e: posterior.mean_log_likelihood(
            e.positions, x_test, y_test),
    }
    out = particle_run(algorithm, posterior, int(params["n_particles"]),
                       float(params["dt"]), float(params["t_final"]),
                       seed=int(params["seed"]), replicate=replicate,
                       kernel=kernel,
                       init_sampler=posterior.sample_prior,
                       recorders=recorders, thinning=int(params["thinning"]))
    return ReplicateResult(label=f"{algorithm}/rep{replicate}", seed=replicate,
                           series=out["series"],
                           finals={"positions": out["final"].positions})


def bayes_benchmark(params, out_dir=None):
    """Run the configured samplers on the logistic posterior and report test
    accuracy and mean predictive log-likelihood, per seed and aggregated."""
    t0 = time.perf_counter()
    features, labels = load_dataset(params["dataset"],
                                    fmt=params["dataset_format"],
                                    standardize=params["standardize"])
    x_train, y_train, x_test, y_test = train_test_split(
        features, labels, test_fraction=params["test_fraction"],
        seed=params["seed"])
    records = []
    for algorithm in params["algorithms"]:
        tasks = [(params, algorithm, rep, x_train, y_train, x_test, y_test)
                 for rep in range(params["replicates"])]
        reps = _map_tasks(_bayes_replicate, tasks)
        records.append(RunRecord(
            config={**params, "algorithm": algorithm}, replicates=reps,
            master_seed=params["seed"], version=__version__,
            wall_clock=time.perf_counter() - t0,
            summary=_final_means(reps, ("accuracy", "log_likelihood")),
        ))
    if out_dir is not None:
        emit_particle_records(records, out_dir, provenance=(
            "binary-classification posterior benchmark; accuracy uses the "
            "particle-averaged predictive probability thresholded at 1/2"))
    return records


# ---------------------------------------------------------------------------
# Emission shared by the particle presets.


def emit_particle_records(records, out_dir, provenance=""):
    os.makedirs(out_dir, exist_ok=True)
    metric_names = None
    curves_by_metric = {}
    for record in records:
        algorithm = record.config["algorithm"]
        metric_names = [k for k in record.replicates[0].series if k != "t"]
        stacked = {m: [] for m in metric_names}
        times = record.replicates[0].series["t"]
        for rep in record.replicates:
            reports.write_timeseries_csv(
                os.path.join(out_dir, f"{algorithm}_rep{rep.seed}.csv"),
                rep.series, columns=["t"] + metric_names)
            for m in metric_names:
                stacked[m].append(rep.series[m])
        agg_cols, agg_series = ["t"], {"t": times}
        for m in metric_names:
            arr = np.vstack(stacked[m])
            agg_series[f"{m}_mean"] = arr.mean(axis=0)
            agg_series[f"{m}_sd"] = (arr.std(axis=0, ddof=1) if arr.shape[0] > 1
                                     else np.zeros(arr.shape[1]))
            agg_cols += [f"{m}_mean", f"{m}_sd"]
            curves_by_metric.setdefault(m, []).append(
                (algorithm, times, agg_series[f"{m}_mean"]))
        reports.write_timeseries_csv(
            os.path.join(out_dir, f"{algorithm}_aggregate.csv"),
            agg_series, columns=agg_cols)
    for m, curves in curves_by_metric.items():
        positive = all(np.all(np.asarray(c[2]) > 0) for c in curves)
        reports.line_plot(os.path.join(out_dir, f"{m}.svg"), curves,
                          xlabel="t", ylabel=m.replace("_", " "),
                          yscale="log" if positive else "linear",
                          title=f"{m.replace('_', ' ')} (mean over replicates)")
    combined = RunRecord(
        config=records[0].config | {"algorithm": [r.config["algorithm"] for r in records]},
        replicates=[rep for r in records for rep in r.replicates],
        master_seed=records[0].master_seed,
        wall_clock=max(r.wall_clock for r in records),
        version=__version__,
        summary={r.config["algorithm"]: r.summary for r in records},
    )
    reports.write_manifest(os.path.join(out_dir, "manifest.json"), combined,
                           extra={"provenance": provenance,
                                  "replicate_seed_rule":
                                      "SeedSequence((master_seed, replicate))"})


# ---------------------------------------------------------------------------
# Top-level dispatch.


def run_custom(params, out_dir=None):
    from .grids import GridDensity
    from .meanfield import MeanFieldState, simulate

    target = meanfield._make_torus_target(params["potential"], params["n_grid"])
    kernel = (KernelSpec(float(params["epsilon"]), 1)
              if params["dynamics"] in ("bde", "bdls") else None)
    rho0 = GridDensity.uniform(params["n_grid"], target.period)
    series = simulate(MeanFieldState(rho0, 0.0, target, kernel),
                      params["dynamics"], params["dt"], params["t_final"],
                      params["record_every"],
                      with_bounds=params["dynamics"] in ("bd", "bd2"),
                      with_feps=kernel is not None)
    final = series.pop("final_rho")
    record = RunRecord(config=dict(params),
                       replicates=[ReplicateResult(label=params["dynamics"],
                                                   seed=None, series=series,
                                                   finals={"rho": final})],
                       master_seed=params["seed"], version=__version__)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        reports.write_timeseries_csv(
            os.path.join(out_dir, f"{params['dynamics']}_trajectory.csv"), series)
        reports.write_manifest(os.path.join(out_dir, "manifest.json"), record,
                               extra={"provenance": "custom mean-field run"})
    return [record]


_PROVENANCE = {
    "gmm_particles": "four-mode planar Gaussian mixture benchmark: alternating "
                     "Langevin/birth-death samplers vs plain Langevin and "
                     "Stein descent",
    "bayes_logreg": "binary-classification posterior benchmark; accuracy uses "
                    "the particle-averaged predictive probability thresholded "
                    "at 1/2",
}


def emit(records, out_dir):
    """Write CSVs, figures, and the manifest for already-computed records.

    Routes on the record contents: particle-algorithm records, the
    bandwidth-ladder record, and mean-field trajectory records each get
    their own layout.
    """
    if not records:
        raise ValueError("nothing to emit")
    first = records[0].config
    if "algorithm" in first:
        preset = first.get("preset", "")
        emit_particle_records(records, out_dir,
                              provenance=_PROVENANCE.get(preset, ""))
    elif "eps_ladder" in first:
        for record in records:
            reports.emit_eps_scaling(record, out_dir)
    else:
        for record in records:
            reports.emit_decay(record, out_dir)
    return out_dir


def run(config, out_dir=None):
    """Dispatch a validated config to its preset implementation; returns the
    list of run records (and writes files when out_dir is given)."""
    params = dict(config.params)
    params["preset"] = config.preset
    out_dir = out_dir or params.get("out_dir")
    if config.preset == "torus_decay":
        return [meanfield.run_decay_experiment(params_subset(params, "torus_decay"),
                                               out_dir=out_dir)]
    if config.preset == "eps_scaling":
        return [meanfield.run_eps_scaling(params_subset(params, "eps_scaling"),
                                          out_dir=out_dir)]
    if config.preset == "gmm_particles":
        return run_gmm_particles(params, out_dir=out_dir)
    if config.preset == "bayes_logreg":
        return bayes_benchmark(params, out_dir=out_dir)
    if config.preset == "custom":
        return run_custom(params, out_dir=out_dir)
    raise ConfigError(f"unknown preset {config.preset!r}")


def params_subset(params, preset):
    keys = ("n_grid", "dt", "t_final", "record_every", "potential",
            "eps_ladder")
    return {k: params[k] for k in keys if k in params}


def preset_listing():
    lines = []
    for name in sorted(PRESETS):
        meta = PRESETS[name]
        lines.append(f"{name}: {meta['description']}")
        defaults = {k: v for k, v in meta["defaults"].items()}
        lines.append(f"  defaults: {json.dumps(defaults, sort_keys=True)}")
    return "\n".join(lines)
