"""Command-line workflows: simulate, fit, heldout, baseline, rmp, diagnose.

Every command is a function of its input files, the run configuration and
the seed; outputs carry a ``#`` header with version, seed and config hash.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .baselines import contact_log_density, contact_mle, kde_fit, kde_log_density, uniform_log_density
from .config import RunConfig, load_config
from .core import ImpossibleAssignmentError
from .generative import SimConfig, simulate_dataset
from .heldout import chain_ess, geo_mean_metric, heldout_density, per_accidental_metric_log
from .mcmc import ChainConfig, PosteriorDraws, run_chain
from .rmp import MatchPredicateConfig, empirical_count_sampler, random_match_probability

log = logging.getLogger("soleprint")

METHODS = ("uniform", "kde", "contact")


def _header(cfg: RunConfig, **extra) -> str:
    return io.header_line(cfg.seed, cfg.hash(), **extra)


def split_ids(ids, cfg: RunConfig):
    """Train and test shoe ids for split ``cfg.split``: a permutation seeded
    by ``(seed, split)``."""
    ids = list(ids)
    if cfg.n_train + cfg.n_test > len(ids):
        raise ValueError(f"split needs {cfg.n_train + cfg.n_test} shoes, dataset has {len(ids)}")
    perm = np.random.default_rng([cfg.seed, cfg.split]).permutation(len(ids))
    train = [ids[k] for k in perm[:cfg.n_train]]
    test = [ids[k] for k in perm[cfg.n_train:cfg.n_train + cfg.n_test]]
    return train, test


def _split_shoes(shoes, cfg):
    by_id = {s.shoe_id: s for s in shoes}
    tr, te = split_ids([s.shoe_id for s in shoes], cfg)
    return [by_id[k] for k in tr], [by_id[k] for k in te]


# --- commands ---------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, out):
    ds = simulate_dataset(SimConfig(n_shoes=cfg.n_shoes, median_count=cfg.median_count,
                                    mask_coverage=cfg.mask_coverage,
                                    confine_to_active=cfg.confine_to_active),
                          seed=cfg.seed)
    io.save_dataset(ds.shoes, ds.coarse, out, _header(cfg), truth=ds.truth)
    n = [s.n for s in ds.shoes]
    log.info("simulated %d shoes, median %s accidentals", len(n), np.median(n) if n else 0)
    return ds


def _chain_meta(cfg, **extra):
    return {"version": io.VERSION, "seed": cfg.seed, "config_hash": cfg.hash(), "variant": cfg.variant,
            **extra}


def cmd_fit(cfg: RunConfig, data, out, resume=None) -> PosteriorDraws:
    shoes, cm, _ = io.load_dataset(data)
    train, _ = _split_shoes(shoes, cfg)
    theta0, start, prev = None, 0, None
    if resume is not None:
        prev = io.load_draws(resume)
        if len(prev) == 0:
            raise ValueError(f"{resume}: no draws to resume from")
        if prev.variant.name != cfg.variant:
            raise ValueError(f"{resume}: variant {prev.variant.name!r} differs from {cfg.variant!r}")
        theta0, start = prev.theta(len(prev) - 1), int(prev.iters[-1])
        ccfg = ChainConfig(n_sweeps=cfg.iters, warmup=0, thin=cfg.thin, variant=cfg.model_variant)
    else:
        ccfg = ChainConfig(n_sweeps=cfg.iters, warmup=cfg.warmup, thin=cfg.thin,
                           variant=cfg.model_variant)
    rng = np.random.default_rng([cfg.seed, start])
    t0 = time.perf_counter()
    try:
        draws = run_chain(train, cm, ccfg, rng, theta0=theta0, start_iter=start)
    except ImpossibleAssignmentError as exc:
        raise SystemExit(f"fit aborted: {exc}") from None
    dt = time.perf_counter() - t0
    if prev is not None:
        draws = PosteriorDraws.from_records(list(prev.records()) + list(draws.records()), ccfg.variant)
    io.write_draw_log(draws, out, _chain_meta(cfg, n_train=len(train)))
    print(f"fit: {ccfg.n_sweeps} sweeps in {dt:.1f}s ({ccfg.n_sweeps / max(dt, 1e-9):.1f} sweeps/s); "
          f"slice updates accept every proposal; {len(draws)} draws written", file=sys.stderr)
    return draws


def _result_row(shoe, logp, ess=math.nan):
    return {"shoe_id": shoe.shoe_id, "N": shoe.n, "estimate_log": logp,
            "metric": per_accidental_metric_log(logp, shoe.n), "ess": ess}


def _write_results(cfg, rows, out, **summary):
    geo = geo_mean_metric(r["metric"] for r in rows)
    text = io.format_results(rows, _header(cfg, **summary), {"geo_mean_metric": geo, "n_shoes": len(rows)})
    io.atomic_write(out, text)
    return geo


def cmd_heldout(cfg: RunConfig, data, draws_path, out):
    if not Path(draws_path).exists():
        raise FileNotFoundError(f"missing draw log {draws_path}")
    draws = io.load_draws(draws_path)
    if len(draws) == 0:
        raise ValueError(f"{draws_path}: no draws")
    shoes, cm, _ = io.load_dataset(data)
    _, test = _split_shoes(shoes, cfg)
    rng = np.random.default_rng([cfg.seed, cfg.split, 1])
    rows = []
    for s in test:
        if s.n == 0:
            rows.append(_result_row(s, 0.0))
            continue
        r = heldout_density(draws, s, cm, rng, draws.variant, cfg.importance_samples)
        rows.append({"shoe_id": r.shoe_id, "N": r.N, "estimate_log": r.estimate_log,
                     "metric": r.metric, "ess": r.ess})
    return rows, _write_results(cfg, rows, out, model=draws.variant.name)


def cmd_baseline(cfg: RunConfig, data, method, out):
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    shoes, cm, _ = io.load_dataset(data)
    train, test = _split_shoes(shoes, cfg)
    if method == "uniform":
        score = lambda s: uniform_log_density(cm.active, s.points)
    elif method == "kde":
        pts = np.concatenate([s.points for s in train]) if train else np.zeros((0, 2))
        fit = kde_fit(pts, cm.shape, cm.active if cfg.kde_restrict else None)
        score = lambda s: kde_log_density(fit, s.points)
    else:
        params, info = contact_mle(train, cm.active)
        log.info("contact MLE: %d iterations, gradient norm %.2g", info["iterations"], info["grad_norm"])
        score = lambda s: contact_log_density(params, s.surface, cm.active, s.points)
    rows = [_result_row(s, score(s)) for s in test]
    return rows, _write_results(cfg, rows, out, model=method)


def cmd_rmp(cfg: RunConfig, data, draws_path, query_id, out, predicate=None):
    draws = io.load_draws(draws_path)
    shoes, cm, _ = io.load_dataset(data)
    by_id = {s.shoe_id: s for s in shoes}
    if query_id not in by_id:
        raise KeyError(f"unknown query shoe {query_id!r}")
    query = by_id[query_id]
    train, _ = _split_shoes(shoes, cfg)
    counts = [s.n for s in train] or [query.n]
    mcfg = MatchPredicateConfig(cfg.radius, cfg.count_tolerance, cfg.match_mode)
    res = random_match_probability(draws, query.surface, query.points, cm, empirical_count_sampler(counts),
                                   np.random.default_rng([cfg.seed, 2]), cfg.replicates, predicate,
                                   mcfg, draws.variant)
    text = (_header(cfg, query=query_id) + "\nmatches,replicates,rmp,ci_low,ci_high,level\n"
            f"{res.matches},{res.replicates},{res.estimate!r},{res.ci_low!r},{res.ci_high!r},{res.level!r}\n")
    io.atomic_write(out, text)
    return res


def tracked_parameters(draws: PosteriorDraws):
    """``(name, trace)`` for q, the kernel tiers and selected w_E and phi."""
    out = [("q", draws.q)]
    R = draws.log_w_E.shape[1]
    for r in sorted({0, R // 2, R - 1}):
        out.append((f"log_w_E[{r + 1}]", draws.log_w_E[:, r]))
    for k in (0, 15, 31):
        out.append((f"phi[{k + 1}]", draws.phi[:, k]))
    for t in range(draws.p_h.shape[1]):
        out.append((f"p_h[{t + 1}]", draws.p_h[:, t]))
        out.append((f"p_v[{t + 1}]", draws.p_v[:, t]))
    return out


def cmd_diagnose(cfg: RunConfig, draws_path, out):
    draws = io.load_draws(draws_path)
    if len(draws) == 0:
        raise ValueError(f"{draws_path}: no draws")
    lines = [_header(cfg), "param,mean,sd,q05,q50,q95,ess,degenerate"]
    rows = []
    for name, x in tracked_parameters(draws):
        x = np.asarray(x, dtype=float)
        degenerate = bool(np.ptp(x) == 0)
        ess = chain_ess(x)
        q05, q50, q95 = np.quantile(x, [0.05, 0.5, 0.95])
        rows.append((name, ess, degenerate))
        vals = ",".join(repr(float(v)) for v in (x.mean(), x.std(), q05, q50, q95, ess))
        lines.append(f"{name},{vals},{int(degenerate)}")
    io.atomic_write(out, "\n".join(lines) + "\n")
    for name, _, deg in rows:
        if deg:
            log.warning("%s is constant over the draw log", name)
    return rows


# --- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--config", type=Path)
    common.add_argument("--out", type=Path, required=True)
    common.add_argument("--split", type=int)
    common.add_argument("--variant")
    common.add_argument("--n-train", type=int, dest="n_train")
    common.add_argument("--n-test", type=int, dest="n_test")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="soleprint", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common])
    s.add_argument("--n-shoes", type=int, dest="n_shoes")
    s.add_argument("--median-count", type=int, dest="median_count")

    s = sub.add_parser("fit", parents=[common])
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--iters", type=int)
    s.add_argument("--warmup", type=int)
    s.add_argument("--thin", type=int)
    s.add_argument("--resume", type=Path)

    s = sub.add_parser("heldout", parents=[common])
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--draws", type=Path, required=True)

    s = sub.add_parser("baseline", parents=[common])
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--method", choices=METHODS, required=True)

    s = sub.add_parser("rmp", parents=[common])
    s.add_argument("--data", type=Path, required=True)
    s.add_argument("--draws", type=Path, required=True)
    s.add_argument("--query", required=True, help="shoe id supplying the query mask and accidentals")
    s.add_argument("--replicates", type=int)
    s.add_argument("--radius", type=float)

    s = sub.add_parser("diagnose", parents=[common])
    s.add_argument("--draws", type=Path, required=True)
    return p


_CONFIG_FLAGS = ("seed", "split", "variant", "n_train", "n_test", "n_shoes", "median_count", "iters",
                 "warmup", "thin", "replicates", "radius")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k, None) for k in _CONFIG_FLAGS}
    if getattr(args, "resume", None) is not None and overrides["warmup"] is None:
        overrides["warmup"] = 0         # a resumed chain is already past warm-up
    try:
        cfg = load_config(args.config, **overrides)
        if args.command == "simulate":
            cmd_simulate(cfg, args.out)
        elif args.command == "fit":
            cmd_fit(cfg, args.data, args.out, args.resume)
        elif args.command == "heldout":
            _, geo = cmd_heldout(cfg, args.data, args.draws, args.out)
            print(f"geo_mean_metric={geo:.4f}")
        elif args.command == "baseline":
            _, geo = cmd_baseline(cfg, args.data, args.method, args.out)
            print(f"geo_mean_metric={geo:.4f}")
        elif args.command == "rmp":
            r = cmd_rmp(cfg, args.data, args.draws, args.query, args.out)
            print(f"rmp={r.estimate:.6g} ci=[{r.ci_low:.6g}, {r.ci_high:.6g}]")
        elif args.command == "diagnose":
            cmd_diagnose(cfg, args.draws, args.out)
    except (ValueError, KeyError, FileNotFoundError, OSError) as exc:
        print(f"soleprint {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
