"""Convergence experiments: scenario generation, batched filtering, outputs.

Every (prior variance, noise variance, replicate) triple owns a Philox
stream keyed by ``(seed, sigma index, xi index, replicate)``, so adding
replicates or grid points never changes existing ones and the output is
independent of the number of worker processes.
"""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from typing import NamedTuple

import numpy as np

from ..exceptions import NotFullRankError
from ..filter import SystemModel, run_batch
from ..stats import (
    load_maxvar_table,
    max_scalar_variance_mc,
    max_scalar_variance_sphere,
)
from ..stiefel import Stiefel, projection
from .config import ConfigError

log = logging.getLogger(__name__)

TRACE_HEADER = ("step", "PK", "gain", "dist2_norm", "innov_norm")
SUMMARY_HEADER = ("sigma0_2", "xi2", "step", "PK", "gain", "dist2_median",
                  "dist2_q25", "dist2_q75", "dist2_mean", "n_valid")
MAXVAR_STREAM = 2 ** 32 - 1


class Scenario(NamedTuple):
    x0: np.ndarray
    truth: np.ndarray
    measurements: np.ndarray  # (N, n, k)
    resamples: int


def replicate_seed(seed, i_sigma, i_xi, replicate):
    return np.random.SeedSequence(seed, spawn_key=(i_sigma, i_xi, replicate))


def replicate_rng(seed, i_sigma, i_xi, replicate):
    return np.random.Generator(np.random.Philox(replicate_seed(seed, i_sigma, i_xi, replicate)))


def _project_counting(draw):
    """Project ``draw()`` and redraw whole batches that are rank deficient."""
    redraws = 0
    while True:
        try:
            return projection(draw()), redraws
        except NotFullRankError:
            redraws += 1


def generate_scenario(config, rng, sigma0_2=None, xi2=None):
    """Draw ``x0``, the truth ``pr(x0)`` and N measurements.

    ``section4`` projects ``x0 + eps``; ``eq-filtering`` projects
    ``pr(x0) + eps``. Rank-deficient draws are redrawn and counted.
    """
    n, k, N = config.n, config.k, config.num_steps
    sigma0_2 = config.sigma0_2[0] if sigma0_2 is None else sigma0_2
    xi2 = config.xi2_list[0] if xi2 is None else xi2
    mu0 = np.eye(n, k)
    x0 = mu0 + math.sqrt(sigma0_2) * rng.standard_normal((n, k))
    redraws = 0
    while True:
        try:
            truth = projection(x0)
            break
        except NotFullRankError:
            redraws += 1
            x0 = mu0 + math.sqrt(sigma0_2) * rng.standard_normal((n, k))
    center = x0 if config.measurement_model == "section4" else truth
    sd = math.sqrt(xi2)
    Z = np.empty((N, n, k))
    for m in range(N):
        Z[m], r = _project_counting(lambda: center + sd * rng.standard_normal((n, k)))
        redraws += r
    if redraws:
        log.info("redrew %d rank-deficient samples", redraws)
    return Scenario(x0, truth, Z, redraws)


def resolve_maxvar(config):
    """Return ``(value, info)`` for the configured source."""
    n, k = config.n, config.k
    if config.maxvar_source == "closed_form":
        return max_scalar_variance_sphere(n - 1), {"source": "closed_form"}
    if config.maxvar_source == "file":
        table = load_maxvar_table()
        if (n, k) not in table:
            raise ConfigError(f"no shipped maxvar entry for St({n},{k}); use maxvar_source = mc")
        rec = table[(n, k)]
        return rec.estimate, {"source": "file", "samples": rec.samples, "seed": rec.seed,
                              "std_error": rec.std_error}
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence(config.seed, spawn_key=(MAXVAR_STREAM,))))
    est = max_scalar_variance_mc(n, k, config.mc_samples, rng=rng)
    return est.estimate, {"source": "mc", "samples": est.samples, "std_error": est.std_error,
                          "failure_fraction": est.failure_fraction}


def run_group(config, i_sigma, i_xi, maxvar):
    """All replicates of one (sigma0_2, xi2) pair, filtered in lockstep."""
    sigma0_2, xi2 = config.sigma0_2[i_sigma], config.xi2_list[i_xi]
    R = config.num_replicates
    scen = [generate_scenario(config, replicate_rng(config.seed, i_sigma, i_xi, r), sigma0_2, xi2)
            for r in range(R)]
    Z = np.stack([s.measurements for s in scen])
    truth = np.stack([s.truth for s in scen])
    model = SystemModel(Stiefel(config.n, config.k, maxvar=maxvar), xi2)
    res = run_batch(np.eye(config.n, config.k), sigma0_2, model, Z, truth=truth)
    return {
        "i_sigma": i_sigma,
        "i_xi": i_xi,
        "PK": res.PK,
        "gain": res.gain,
        "dist2": res.dist2_norm,
        "innov": res.innov_norm,
        "failed_at": res.failed_at,
        "resamples": [s.resamples for s in scen],
    }


def _fmt(x):
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def trace_path(out_dir, sigma0_2, xi2, replicate):
    return os.path.join(out_dir, "traces", f"sigma0_2={sigma0_2!r}_xi2={xi2!r}",
                        f"rep{replicate:04d}.csv")


def write_traces(out_dir, config, group):
    sigma0_2 = config.sigma0_2[group["i_sigma"]]
    xi2 = config.xi2_list[group["i_xi"]]
    paths = []
    for r in range(config.num_replicates):
        path = trace_path(out_dir, sigma0_2, xi2, r)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        rows = [(str(m + 1), _fmt(group["PK"][m]), _fmt(group["gain"][m]),
                 _fmt(group["dist2"][r, m]), _fmt(group["innov"][r, m]))
                for m in range(config.num_steps)]
        _write_csv(path, TRACE_HEADER, rows)
        paths.append(path)
    return paths


def summarize_group(config, group):
    """Per-step median, quartiles and mean of the normalized dist^2."""
    sigma0_2 = config.sigma0_2[group["i_sigma"]]
    xi2 = config.xi2_list[group["i_xi"]]
    rows = []
    for m in range(config.num_steps):
        d = group["dist2"][:, m]
        d = np.sort(d[~np.isnan(d)])
        if d.size:
            q25, med, q75 = np.quantile(d, [0.25, 0.5, 0.75])
            mean = math.fsum(d) / d.size
        else:
            q25 = med = q75 = mean = math.nan
        rows.append((repr(sigma0_2), repr(xi2), str(m + 1), _fmt(group["PK"][m]),
                     _fmt(group["gain"][m]), _fmt(med), _fmt(q25), _fmt(q75), _fmt(mean),
                     str(d.size)))
    return rows


class ExperimentResult(NamedTuple):
    out_dir: str
    summary_path: str
    manifest_path: str
    plot_paths: list
    maxvar: float
    groups: list


def _run_group_star(args):
    return run_group(*args)


def run_experiment(config, out_dir=None, jobs=1, plots=True):
    """Run every (sigma0_2, xi2) group and write traces, summary, plots.

    ``jobs`` parallelizes over groups with worker processes; the outputs do
    not depend on it.
    """
    from .plots import emit_plots

    out_dir = config.resolve_output_dir(out_dir)
    maxvar, maxvar_info = resolve_maxvar(config)
    tasks = [(config, i, j, maxvar)
             for i in range(len(config.sigma0_2)) for j in range(len(config.xi2_list))]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
            groups = list(ex.map(_run_group_star, tasks))
    else:
        groups = [run_group(*t) for t in tasks]

    os.makedirs(out_dir, exist_ok=True)
    summary_rows = []
    replicates = []
    for g in groups:
        write_traces(out_dir, config, g)
        summary_rows.extend(summarize_group(config, g))
        for r in range(config.num_replicates):
            replicates.append({
                "sigma0_2": config.sigma0_2[g["i_sigma"]],
                "xi2": config.xi2_list[g["i_xi"]],
                "replicate": r,
                "spawn_key": [g["i_sigma"], g["i_xi"], r],
                "failed_at_step": None if g["failed_at"][r] < 0 else int(g["failed_at"][r]) + 1,
                "resamples": g["resamples"][r],
            })
    summary_path = os.path.join(out_dir, "summary.csv")
    _write_csv(summary_path, SUMMARY_HEADER, summary_rows)

    manifest = {
        "config": config.result_fields(),
        "config_hash": config.config_hash,
        "name": config.name,
        "manifold": [config.n, config.k],
        "maxvar": maxvar,
        "maxvar_info": maxvar_info,
        "rng": "Philox, SeedSequence(seed, spawn_key=(sigma index, xi index, replicate))",
        "plot_yscale": "log",
        "failed_replicates": sum(r["failed_at_step"] is not None for r in replicates),
        "replicates": replicates,
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(config.to_text())

    plot_paths = emit_plots(summary_path, os.path.join(out_dir, "plots"),
                            title=config.name) if plots else []
    return ExperimentResult(out_dir, summary_path, manifest_path, plot_paths, maxvar, groups)


def read_summary(path):
    """Parse a summary CSV into ``{column: list}`` (floats, NaN for blanks)."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        return {}
    header = lines[0].split(",")
    cols = {h: [] for h in header}
    for ln in lines[1:]:
        for h, v in zip(header, ln.split(",")):
            cols[h].append(float(v) if v else math.nan)
    return cols
