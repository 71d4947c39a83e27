"""Batch command line: simulate | fit | evaluate | summarize | forecast.

Exit codes: 0 success, 1 configuration or usage problem, 2 I/O failure,
3 numerical abort during sampling. The worker count for parallel chains
comes from --threads, falling back to the DPMVAR_THREADS environment
variable, falling back to 1.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, io, metrics, simgen, var_core
from .exceptions import ChainNumericalError, ConfigError, GenerationError
from .samplers import run_chain

THREADS_ENV = "DPMVAR_THREADS"

EVALUATE_COLUMNS = ("replicate", "variant", "metric", "value")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; the contract wants 1
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dpmvar", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset with ground truth")
    p.add_argument("--config", required=True, help="simulation config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("fit", help="run Gibbs chains on a dataset")
    p.add_argument("manifest", help="dataset manifest JSON")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--chains", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--standardize", action="store_true", default=None,
                   help="center and scale each node's time course before fitting")

    p = sub.add_parser("evaluate", help="score a fit against stored ground truth")
    p.add_argument("draws", help="fit output directory")
    p.add_argument("--truth", default=None, help="ground-truth archive (defaults to the manifest's)")
    p.add_argument("--manifest", default=None, help="dataset manifest (defaults to the fit's)")
    p.add_argument("--out", default=None, help="metrics table path (default: stdout)")

    p = sub.add_parser("summarize", help="posterior selection tables and clusterings")
    p.add_argument("draws", help="fit output directory")
    p.add_argument("--fdr", type=float, default=0.05, help="false discovery rate level")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--groups", default=None, help="JSON mapping subject id -> group label")

    p = sub.add_parser("forecast", help="point forecasts from posterior-mean parameters")
    p.add_argument("draws", help="fit output directory")
    p.add_argument("manifest", help="dataset manifest JSON")
    p.add_argument("--horizon", type=int, default=5)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--with-errors", action="store_true",
                   help="also score against holdout blocks; missing holdout is an error")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print(f"dpmvar: error: {err}", file=sys.stderr)
        return 1
    try:
        return args_dispatch(args)
    except ConfigError as err:
        print(f"dpmvar: config error: {err}", file=sys.stderr)
        return 1
    except GenerationError as err:
        print(f"dpmvar: generation error: {err}", file=sys.stderr)
        return 1
    except ChainNumericalError as err:
        print(f"dpmvar: numerical abort: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"dpmvar: io error: {err}", file=sys.stderr)
        return 2


def args_dispatch(args) -> int:
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out, args.seed)
    if args.command == "fit":
        return cmd_fit(
            args.manifest, args.config, args.out,
            seed=args.seed, chains=args.chains, threads=args.threads,
            standardize=args.standardize,
        )
    if args.command == "evaluate":
        return cmd_evaluate(args.draws, truth=args.truth, manifest=args.manifest, out=args.out)
    if args.command == "summarize":
        return cmd_summarize(args.draws, fdr=args.fdr, out=args.out, groups=args.groups)
    if args.command == "forecast":
        return cmd_forecast(
            args.draws, args.manifest, horizon=args.horizon, out=args.out,
            with_errors=args.with_errors,
        )
    raise _UsageError(f"unknown command {args.command}")


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(config_path, out_dir, seed=None) -> int:
    cfg = io.read_sim_config(config_path)
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for rep in range(cfg.replicates):
        rep_dir = out_dir / f"replicate_{rep:03d}"
        (rep_dir / "subjects").mkdir(parents=True, exist_ok=True)
        truth, panels, holdouts = simgen.generate_replicate(cfg, rep)
        entries = []
        if cfg.holdout > 0:
            (rep_dir / "holdout").mkdir(exist_ok=True)
        for i, panel in enumerate(panels):
            sid = f"s{i:03d}"
            rel = f"subjects/{sid}.txt"
            io.write_panel(rep_dir / rel, panel)
            hold_rel = None
            if cfg.holdout > 0:
                hold_rel = f"holdout/{sid}.txt"
                io.write_panel(rep_dir / hold_rel, holdouts[i])
            entries.append(io.SubjectEntry(sid, rel, panel.shape[1], hold_rel))
        io.write_truth(rep_dir / "truth.npz", truth)
        manifest = io.DatasetManifest(
            n_nodes=cfg.n_nodes,
            subjects=entries,
            n_lags_hint=cfg.n_lags,
            truth="truth.npz",
        )
        io.write_manifest(rep_dir / "manifest.json", manifest)
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def standardize_panels(panels):
    """Per subject, per node: subtract the mean and divide by the sd over scans."""
    out = []
    stats = []
    for p in panels:
        mean = p.data.mean(axis=1, keepdims=True)
        sd = p.data.std(axis=1, keepdims=True)
        if np.any(sd == 0):
            raise ConfigError(f"subject {p.id}: a node has zero variance; cannot standardize")
        out.append(var_core.SubjectPanel(p.id, (p.data - mean) / sd))
        stats.append((mean, sd))
    return out, stats


def _resolve_threads(threads) -> int:
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as err:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from err
    return 1


def _fit_single_chain(manifest_path, config_payload, chain, chain_dir):
    cfg = io.run_config_from_dict(config_payload)
    panels, _ = io.load_dataset(manifest_path)
    if cfg.standardize:
        panels, _ = standardize_panels(panels)
    draws = run_chain(panels, cfg.hyper, cfg.variant, cfg.seed, chain=chain)
    meta = {
        "config_hash": io.config_hash(config_payload),
        "chain": chain,
        "standardize": cfg.standardize,
        "manifest": str(manifest_path),
        "software_version": __version__,
    }
    io.save_draws(chain_dir, draws, meta)


def cmd_fit(manifest_path, config_path, out_dir, seed=None, chains=None,
            threads=None, standardize=None) -> int:
    cfg = io.read_run_config(config_path)
    if seed is not None:
        cfg.seed = int(seed)
    if chains is not None:
        cfg.chains = int(chains)
    if standardize:
        cfg.standardize = True
    cfg.validate()
    payload = {
        "variant": cfg.variant,
        "seed": cfg.seed,
        "chains": cfg.chains,
        "standardize": cfg.standardize,
        **{k: v for k, v in vars(cfg.hyper).items()},
    }
    # fail fast on bad data before spawning workers
    panels, _ = io.load_dataset(manifest_path)
    if cfg.standardize:
        standardize_panels(panels)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_workers = min(_resolve_threads(threads), cfg.chains)
    started = time.time()
    jobs = [
        (manifest_path, payload, c, out_dir / f"chain_{c:02d}")
        for c in range(cfg.chains)
    ]
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(_fit_single_chain, *job) for job in jobs]
            for fut in futures:
                fut.result()
    else:
        for job in jobs:
            _fit_single_chain(*job)
    # wall time is observational and intentionally kept out of metadata.json
    # so repeated runs stay byte-identical
    (out_dir / "run_info.txt").write_text(
        f"wall_time_seconds {time.time() - started:.3f}\n"
    )
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _axis_ari(fitted_labels, truth_labels) -> float:
    """Mean ARI of fitted point partitions against the truth's group structure.

    Matched axes pair group-by-group; otherwise every truth group is scored
    against every fitted group (so a subject-level fit is mapped onto each
    row or lag of the truth).
    """
    n_fit = fitted_labels.shape[1]
    fit_parts = [metrics.point_clustering(fitted_labels[:, g, :]) for g in range(n_fit)]
    n_truth = truth_labels.shape[0]
    if n_fit == n_truth:
        pairs = [(g, g) for g in range(n_truth)]
    else:
        pairs = [(gt, gf) for gt in range(n_truth) for gf in range(n_fit)]
    scores = [
        metrics.adjusted_rand_index(fit_parts[gf], truth_labels[gt]) for gt, gf in pairs
    ]
    return float(np.mean(scores))


def evaluate_fit(draws, truth, panels, holdouts) -> dict:
    """All evaluation metrics for one fitted replicate, keyed by metric name."""
    rows = {}
    rows["ari_cov"] = metrics.adjusted_rand_index(
        metrics.point_clustering(draws.cov_labels), truth.cov_labels
    )
    rows["ari_autocov"] = _axis_ari(draws.autocov_labels, truth.A_labels)

    A_mean = draws.posterior_mean_A()
    rows["rel_l1_A"] = metrics.relative_error(A_mean, truth.subject_A, 1)
    rows["rel_l2_A"] = metrics.relative_error(A_mean, truth.subject_A, 2)
    sigma_mean = draws.posterior_mean_sigma()
    sigma_truth = truth.cluster_sigma[truth.cov_labels]
    rows["rel_l1_sigma"] = metrics.relative_error(sigma_mean, sigma_truth, 1)
    rows["rel_l2_sigma"] = metrics.relative_error(sigma_mean, sigma_truth, 2)

    flat = draws.subject_A.reshape(draws.n_draws, -1)
    roc, pr = metrics.credible_curves(flat, ~truth.sparsity_mask.ravel())
    rows["roc_auc"] = roc.auc
    rows["pr_auc"] = pr.auc

    horizons = min(h.shape[1] for h in holdouts if h is not None) if any(
        h is not None for h in holdouts
    ) else 0
    if horizons:
        per_step = np.zeros(horizons)
        pooled = 0.0
        count = 0
        for i, panel in enumerate(panels):
            if holdouts[i] is None:
                continue
            pred = var_core.forecast(panel, A_mean[i], horizons)
            step, block = metrics.forecast_error(pred, holdouts[i][:, :horizons])
            per_step += step
            pooled += block
            count += 1
        per_step /= count
        pooled /= count
        for h in range(horizons):
            rows[f"forecast_rel_l2_h{h + 1}"] = float(per_step[h])
        rows["forecast_rel_l2_pooled"] = pooled
    return rows


def _write_metric_table(rows, replicate, variant, out):
    lines = ["\t".join(EVALUATE_COLUMNS)]
    for metric, value in rows.items():
        lines.append(f"{replicate}\t{variant}\t{metric}\t{value:.17g}")
    text = "\n".join(lines) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_evaluate(draws_dir, truth=None, manifest=None, out=None) -> int:
    draws, meta = io.load_all_chains(draws_dir)
    manifest_ref = manifest if manifest is not None else meta.get("manifest")
    if not manifest_ref or not Path(manifest_ref).exists():
        raise ConfigError("manifest not found; pass --manifest")
    manifest_path = Path(manifest_ref)
    panels, manifest_obj = io.load_dataset(manifest_path)
    holdouts = io.load_holdouts(manifest_obj)
    if truth is None:
        if manifest_obj.truth is None:
            raise ConfigError("no truth archive recorded in the manifest; pass --truth")
        truth_path = manifest_obj.resolve(manifest_obj.truth)
    else:
        truth_path = Path(truth)
    if not Path(truth_path).exists():
        raise ConfigError(f"truth archive not found: {truth_path}")
    truth_obj = io.read_truth(truth_path)
    if meta.get("standardize"):
        std_panels, stats = standardize_panels(panels)
        holdouts = [
            None if h is None else (h - m) / s
            for h, (m, s) in zip(holdouts, stats)
        ]
        panels = std_panels
    rows = evaluate_fit(draws, truth_obj, panels, holdouts)
    replicate = manifest_path.parent.name or "."
    _write_metric_table(rows, replicate, draws.variant, out)
    return 0


# ---------------------------------------------------------------------------
# summarize
# ---------------------------------------------------------------------------


def cmd_summarize(draws_dir, fdr=0.05, out=None, groups=None) -> int:
    if not 0.0 < fdr < 1.0:
        raise ConfigError("fdr must lie in (0, 1)")
    draws, meta = io.load_all_chains(draws_dir)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    n, K, D = draws.subject_A.shape[1], draws.n_lags, draws.subject_A.shape[3]

    flat = draws.subject_A.reshape(draws.n_draws, -1)
    sel = metrics.fdr_select(flat, fdr)
    mean = flat.mean(axis=0)
    with open(out / "coefficients.tsv", "w") as fh:
        fh.write("subject\tlag\trow\tcol\tmean\tlower\tupper\ttail_prob\tselected\n")
        j = 0
        for i in range(n):
            sid = draws.subject_ids[i]
            for k in range(K):
                for r in range(D):
                    for c in range(D):
                        fh.write(
                            f"{sid}\t{k + 1}\t{r}\t{c}\t{mean[j]:.17g}\t{sel.lower[j]:.17g}"
                            f"\t{sel.upper[j]:.17g}\t{sel.tail_prob[j]:.17g}\t{int(sel.selected[j])}\n"
                        )
                        j += 1

    np.savetxt(out / "similarity_cov.txt", metrics.similarity_matrix(draws.cov_labels), fmt="%.17g")
    for g in range(draws.autocov_labels.shape[1]):
        np.savetxt(
            out / f"similarity_autocov_g{g}.txt",
            metrics.similarity_matrix(draws.autocov_labels[:, g, :]),
            fmt="%.17g",
        )
    np.savetxt(out / "clusters_cov.txt", metrics.point_clustering(draws.cov_labels)[None, :], fmt="%d")
    point_A = np.stack(
        [
            metrics.point_clustering(draws.autocov_labels[:, g, :])
            for g in range(draws.autocov_labels.shape[1])
        ]
    )
    np.savetxt(out / "clusters_autocov.txt", point_A, fmt="%d")

    summary = {"fdr_level": fdr, "n_selected": int(sel.selected.sum()), "n_draws": draws.n_draws}
    if groups is not None:
        summary["group_contrast"] = _group_contrast(draws, groups, fdr, out)
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    return 0


def _group_contrast(draws, groups_path, fdr, out):
    mapping = json.loads(Path(groups_path).read_text())
    unknown = set(mapping) - set(draws.subject_ids)
    if unknown:
        raise ConfigError(f"group file references unknown subject id: {sorted(unknown)[0]}")
    names = sorted(set(mapping.values()))
    if len(names) != 2:
        raise ConfigError("group file must define exactly two groups")
    idx = {name: [i for i, sid in enumerate(draws.subject_ids) if mapping.get(sid) == name]
           for name in names}
    for name in names:
        if not idx[name]:
            raise ConfigError(f"group {name} has no subjects")
    a, b = names
    diff = draws.subject_A[:, idx[a]].mean(axis=1) - draws.subject_A[:, idx[b]].mean(axis=1)
    flat = diff.reshape(draws.n_draws, -1)
    sel = metrics.fdr_select(flat, fdr)
    mean = flat.mean(axis=0)
    K, D = draws.n_lags, draws.subject_A.shape[3]
    with open(Path(out) / "group_contrast.tsv", "w") as fh:
        fh.write("lag\trow\tcol\tmean_diff\tlower\tupper\ttail_prob\tselected\n")
        j = 0
        for k in range(K):
            for r in range(D):
                for c in range(D):
                    fh.write(
                        f"{k + 1}\t{r}\t{c}\t{mean[j]:.17g}\t{sel.lower[j]:.17g}"
                        f"\t{sel.upper[j]:.17g}\t{sel.tail_prob[j]:.17g}\t{int(sel.selected[j])}\n"
                    )
                    j += 1
    return {"groups": names, "n_selected": int(sel.selected.sum())}


# ---------------------------------------------------------------------------
# forecast
# ---------------------------------------------------------------------------


def cmd_forecast(draws_dir, manifest_path, horizon=5, out=None, with_errors=False) -> int:
    if horizon < 1:
        raise ConfigError("horizon must be >= 1")
    draws, meta = io.load_all_chains(draws_dir)
    panels, manifest_obj = io.load_dataset(manifest_path)
    holdouts = io.load_holdouts(manifest_obj)
    if meta.get("standardize"):
        std_panels, stats = standardize_panels(panels)
        holdouts = [
            None if h is None else (h - m) / s for h, (m, s) in zip(holdouts, stats)
        ]
        panels = std_panels
    if with_errors:
        missing = [p.id for p, h in zip(panels, holdouts) if h is None or h.shape[1] < horizon]
        if missing:
            raise ConfigError(f"holdout missing or too short for subject {missing[0]}")
    out = Path(out)
    (out / "forecasts").mkdir(parents=True, exist_ok=True)
    A_mean = draws.posterior_mean_A()
    error_lines = ["subject\thorizon\trel_l2"]
    for i, panel in enumerate(panels):
        pred = var_core.forecast(panel, A_mean[i], horizon)
        io.write_panel(out / "forecasts" / f"{panel.id}.txt", pred)
        if with_errors:
            step, pooled = metrics.forecast_error(pred, holdouts[i][:, :horizon])
            for h in range(horizon):
                error_lines.append(f"{panel.id}\t{h + 1}\t{step[h]:.17g}")
            error_lines.append(f"{panel.id}\tpooled\t{pooled:.17g}")
    if with_errors:
        (out / "forecast_errors.tsv").write_text("\n".join(error_lines) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
