"""Command-line interface: simulate, fit, summarize, compare.

Exit status 0 on success, 1 on runtime failure, 2 on usage or config errors.
Diagnostics go to stderr; tables go to stdout.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .diagnostics import summarize_fit
from .kinetics import MODEL_KINDS
from .phantom import generate_phantom
from .sampler import PRIOR_MODES, build_problem, merge_stores, run_chain

logger = logging.getLogger("spatialpk")


class UsageError(Exception):
    pass


def _existing_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} directory does not exist: {p}")
    return p


def _with_seed(run: io.RunConfig, seed, phantom: bool):
    from dataclasses import replace

    if seed is None:
        return run
    if phantom:
        return io.RunConfig(sampler=run.sampler, phantom=replace(run.phantom, seed=seed))
    return io.RunConfig(sampler=run.sampler.with_seed(seed), phantom=run.phantom)


def cmd_simulate(args) -> int:
    out = _existing_dir(args.out, "output")
    run = _with_seed(io.read_config(args.config), args.seed, phantom=True)
    dataset, truth = generate_phantom(run.phantom)
    io.write_dataset(dataset, out)
    io.write_truth(truth, out)
    io.write_json(out / "config.json", io.resolved_config(run))
    logger.info("wrote %dx%d phantom with %d time points to %s",
                dataset.nx, dataset.ny, dataset.n_times, out)
    return 0


def _thread_cap() -> int:
    raw = os.environ.get("PERFKIT_THREADS")
    if not raw:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"PERFKIT_THREADS must be an integer, got {raw!r}") from None


def cmd_fit(args) -> int:
    data_dir = _existing_dir(args.data, "data")
    out = _existing_dir(args.out, "output")
    if args.chains < 1:
        raise UsageError("--chains must be >= 1")
    run = _with_seed(io.read_config(args.config), args.seed, phantom=False)
    from dataclasses import replace

    sampler = replace(run.sampler, model=args.model or run.sampler.model,
                      prior=args.prior or run.sampler.prior)
    run = io.RunConfig(sampler=sampler, phantom=run.phantom)
    dataset = io.read_dataset(data_dir)

    configs = [sampler.with_seed(sampler.seed + k) for k in range(args.chains)]
    started = time.perf_counter()
    workers = min(args.chains, _thread_cap())
    with ThreadPoolExecutor(max_workers=workers) as pool:
        stores = list(pool.map(lambda c: run_chain(dataset, c), configs))
    elapsed = time.perf_counter() - started

    for k, store in enumerate(stores):
        io.write_samples(store, out / f"chain_{k}")
    merged = merge_stores(stores)
    summary = summarize_fit(merged, dataset)
    truth = None
    if args.truth:
        truth = io.read_truth(_existing_dir(args.truth, "truth"))
    io.write_maps(summary, truth, out / io.MAPS_DIR)

    noise = build_problem(dataset, sampler).noise
    acc = merged.acceptance
    report = {
        "config": io.resolved_config(run, noise=noise),
        "seeds": [c.seed for c in configs],
        "chains": args.chains,
        "n_draws": int(merged.n_draws),
        "voxels": int(merged.voxel_index.size),
        "pD_total": summary.pd_total,
        "DIC_total": summary.dic_total,
        "tau_eps_median": summary.tau_eps_median,
        "acceptance": {
            "mean": float(acc.mean()),
            "min": float(acc.min()),
            "max": float(acc.max()),
            "fraction_in_0.10_0.35": float(np.mean((acc >= 0.10) & (acc <= 0.35))),
        },
    }
    io.write_json(out / io.RUN_SUMMARY, report)
    # wall-clock time lives apart from the run summary so that repeated runs stay byte-identical
    io.write_json(out / "timing.json", {"wall_clock_seconds": elapsed, "workers": workers})
    logger.info("fit finished in %.1f s; total pD %.2f, DIC %.1f",
                elapsed, summary.pd_total, summary.dic_total)
    return 0


def _load_fit_maps(fit_dir: Path) -> dict[str, np.ndarray]:
    maps_dir = _existing_dir(str(fit_dir / io.MAPS_DIR), "maps")
    return io.read_maps(maps_dir)


def _blocks(truth_dir, shape):
    if truth_dir is None:
        return None
    truth = io.read_truth(_existing_dir(truth_dir, "truth"))
    if (truth.ny, truth.nx) != shape:
        raise UsageError(f"truth grid {truth.ny}x{truth.nx} does not match fit grid {shape[0]}x{shape[1]}")
    return truth


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else io.fmt(x)


SUMMARY_QUANTITIES = ("k_ep1", "k_ep2", "K_trans1", "K_trans2", "v_p", "v_t1", "v_t2",
                      "SSE", "pD", "DIC")


def cmd_summarize(args) -> int:
    maps = _load_fit_maps(Path(args.fit))
    shape = maps["SSE"].shape
    truth = _blocks(args.truth, shape)
    scopes = [("all", np.ones(shape, dtype=bool).ravel())]
    if truth is not None:
        scopes += [(b, truth.block == b) for b in sorted(set(truth.block))]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["scope", "quantity", "median", "true_median", "median_rel_error"])
    for scope, sel in scopes:
        for q in SUMMARY_QUANTITIES:
            if q not in maps:
                continue
            est = maps[q].ravel()
            keep = sel & ~np.isnan(est)
            if not keep.any():
                continue
            row = [scope, q, _fmt(float(np.median(est[keep]))), "", ""]
            if truth is not None and hasattr(truth, q) and q in io.TRUTH_FIELDS + ("v_t1", "v_t2"):
                true = np.asarray(getattr(truth, q))[keep]
                row[3] = _fmt(float(np.median(true)))
                pos = true > 0
                if pos.any():
                    rel = np.abs(est[keep][pos] - true[pos]) / true[pos]
                    row[4] = _fmt(float(np.median(rel)))
            w.writerow(row)
    return 0


def cmd_compare(args) -> int:
    a = _load_fit_maps(Path(args.fit_a))
    b = _load_fit_maps(Path(args.fit_b))
    if a["SSE"].shape != b["SSE"].shape:
        raise UsageError(f"fits cover different grids: {a['SSE'].shape} vs {b['SSE'].shape}")
    shape = a["SSE"].shape
    truth = _blocks(args.truth, shape)
    cols = {}
    for q in ("SSE", "DIC"):
        cols[q] = (a[q].ravel(), b[q].ravel(), (b[q] - a[q]).ravel())
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["scope", "row", "col", "sse_a", "sse_b", "sse_delta", "dic_a", "dic_b", "dic_delta"])
    valid = ~np.isnan(cols["SSE"][0]) & ~np.isnan(cols["SSE"][1])
    nx = shape[1]
    for i in np.flatnonzero(valid):
        r, c = divmod(int(i), nx)
        w.writerow(["voxel", r, c] + [_fmt(v[i]) for q in ("SSE", "DIC") for v in cols[q]])
    scopes = []
    if truth is not None:
        scopes += [(f"block:{blk}", valid & (truth.block == blk)) for blk in sorted(set(truth.block))]
    scopes.append(("all", valid))
    for scope, sel in scopes:
        if not sel.any():
            continue
        w.writerow([scope, "", ""] + [_fmt(float(np.median(v[sel]))) for q in ("SSE", "DIC") for v in cols[q]])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatialpk", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="progress output on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate the block phantom")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="run the MCMC fit on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--prior", choices=PRIOR_MODES)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--truth", help="phantom directory; adds truth maps to the output")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="per-block and global medians of a fit")
    p.add_argument("--fit", required=True)
    p.add_argument("--truth")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("compare", help="per-voxel SSE/DIC differences between two fits")
    p.add_argument("--fit-a", required=True)
    p.add_argument("--fit-b", required=True)
    p.add_argument("--truth")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, io.ConfigError) as exc:
        print(f"spatialpk {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (io.FormatError, io.EmptyMaskError, OSError, RuntimeError, ValueError) as exc:
        print(f"spatialpk {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
