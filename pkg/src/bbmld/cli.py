"""Command-line front end: ``bbmld <subcommand> ...`` (also ``python -m bbmld``)."""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
import time
import warnings

import numpy as np

from . import __version__
from . import estimators as E
from . import observables as O
from . import params as P
from . import spine as SP
from .parallel import default_workers, map_replicas
from .simulator import DEFAULT_MAX_PARTICLES, PopulationCapExceeded, SimConfig, simulate

EST_COLUMNS = ["quantity", "x", "a", "t", "y", "z_lo", "z_hi", "estimate", "stderr", "n", "method", "seed"]
SIM_COLUMNS = ["replica", "population", "level_count", "W_theta", "I_min", "s_argmin", "tau_z",
               "M_t", "hits_line"]


class UsageError(Exception):
    """Bad flag value; exit status 2."""


# ---------------------------------------------------------------- output helpers

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)
    return str(v)


def _atomic_write(path, text: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    raise TypeError(type(o))


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


class Run:
    """Collects outputs and writes them plus a manifest."""

    def __init__(self, args, command):
        self.args = args
        self.command = command
        self.t0 = getattr(args, "_start", time.time())
        self.outputs = {}
        self.counts = {}
        self.warnings = []

    def add(self, name, text):
        self.outputs[name] = text

    def estimates(self, rows):
        self.add("estimates.csv", _csv_text(EST_COLUMNS, rows))
        self.add("estimates.json", _json_text(_clean([{c: r.get(c) for c in EST_COLUMNS} for r in rows])))

    def finish(self):
        out = self.args.out
        digests = {}
        for name, text in self.outputs.items():
            _atomic_write(os.path.join(out, name), text)
            digests[name] = hashlib.sha256(text.encode()).hexdigest()
        cfg = {k: v for k, v in sorted(vars(self.args).items()) if k != "func" and not k.startswith("_")}
        man = dict(tool_version=__version__, command=self.command, config=_clean(cfg),
                   seed=self.args.seed, wall_time=round(time.time() - self.t0, 3),
                   replica_counts=self.counts, warnings=self.warnings, outputs=digests)
        _atomic_write(os.path.join(out, "manifest.json"), _json_text(man))


def _row(quantity, pr, t, y, z_lo, z_hi, est, seed):
    return dict(quantity=quantity, x=pr.x if pr else None, a=pr.a if pr else None, t=t, y=y,
                z_lo=z_lo, z_hi=z_hi, estimate=est.value, stderr=est.stderr, n=est.n,
                method=est.method, seed=seed)


# ---------------------------------------------------------------- validation

def _params(args) -> P.LdpParams:
    x, a = args.x, args.a
    if x is None or a is None:
        raise UsageError("--x and --a are required")
    if not x > 0:
        raise UsageError(f"--x must be > 0 (got {x})")
    lower = max(1.0 - x * x / 2.0, 0.0)
    try:
        return P.derive(x, a)
    except P.DomainError as e:
        raise UsageError(f"--a must lie in ((1 - x^2/2)_+, 1) = ({lower:g}, 1) for --x {x:g} "
                         f"(got {a}); {e}") from None


def _positive(args, *names):
    for n in names:
        v = getattr(args, n)
        if v is None or not v > 0:
            raise UsageError(f"--{n.replace('_', '-')} must be > 0 (got {v})")


def _cfg(args, t):
    return SimConfig(t, seed=args.seed, max_particles=args.max_particles)


# ---------------------------------------------------------------- subcommands

def cmd_params(args):
    pr = _params(args)
    text = json.dumps(pr.as_dict(), indent=2) + "\n"
    sys.stdout.write(text)
    run = Run(args, "params")
    run.add("params.json", text)
    run.finish()
    return 0


def _sim_chunk(lo, hi, *, seed, t, x, a, z, max_particles):
    pr = P.derive(x, a)
    level = pr.v_level(t, z)
    line_level = -pr.dpsi_kappa * pr.p * t
    rows = []
    for r in range(lo, hi):
        tree = simulate(SimConfig(t, seed, r, max_particles))
        s = O.summarize_tree(tree, pr.theta, y=x * t, beta=pr.theta, level=level, line_level=line_level)
        tau = 0.0 if level >= 0 else s.tau
        rows.append([r, s.population, s.level_count, s.W, s.I_min, s.argmin_time,
                     math.nan if tau is None else tau, s.M, float(s.line_hit or line_level >= 0)])
    return np.array(rows, dtype=float).reshape(-1, 9)


def cmd_simulate(args):
    pr = _params(args)
    _positive(args, "t", "replicas")
    run = Run(args, "simulate")
    arr = map_replicas(_sim_chunk, args.replicas, args.workers, seed=args.seed, t=args.t, x=pr.x,
                       a=pr.a, z=args.z, max_particles=args.max_particles)
    rows = []
    for rec in arr:
        rows.append(dict(replica=int(rec[0]), population=int(rec[1]), level_count=int(rec[2]),
                         W_theta=float(rec[3]), I_min=float(rec[4]), s_argmin=float(rec[5]),
                         tau_z=None if math.isnan(rec[6]) else float(rec[6]), M_t=float(rec[7]),
                         hits_line=int(rec[8])))
    run.add("simulate.csv", _csv_text(SIM_COLUMNS, rows))
    if args.dump_tree:
        tree = simulate(SimConfig(args.t, args.seed, 0, args.max_particles))
        buf = io.StringIO()
        tree.dump_csv(buf)
        run.add("tree_replica0.csv", buf.getvalue())
    run.counts["replicas"] = args.replicas
    run.finish()
    return 0


def cmd_estimate(args):
    pr = _params(args)
    _positive(args, "t", "y")
    run = Run(args, "estimate-ldp")
    cfg = _cfg(args, args.t)
    if args.method == "naive":
        _positive(args, "replicas")
        est = E.naive_ldp(pr.x, pr.a, args.t, args.y, args.replicas, cfg, args.workers)
        run.estimates([_row("ldp", pr, args.t, args.y, None, None, est, args.seed)])
        run.counts["naive"] = args.replicas
        summary = dict(method="naive", estimate=est.value, stderr=est.stderr, n=est.n)
    else:
        _positive(args, "replicas_per_window")
        if not args.z_min < args.z_max:
            raise UsageError(f"--z-min must be < --z-max (got {args.z_min}, {args.z_max})")
        res = E.spine_ldp(pr, args.t, args.y, args.z_min, args.z_max, args.replicas_per_window,
                          cfg, args.workers)
        rows = [_row("window", pr, args.t, args.y, z, z + 1, est, args.seed) for z, est, _ in res.windows]
        rows.append(_row("ldp", pr, args.t, args.y, args.z_min, args.z_max, res.combined, args.seed))
        run.estimates(rows)
        run.counts["per_window"] = args.replicas_per_window
        summary = dict(method="spine",
                       windows=[dict(z_lo=z, z_hi=z + 1, estimate=e.value, stderr=e.stderr, n=e.n,
                                     method=e.method, acceptance=acc) for z, e, acc in res.windows],
                       estimate=res.combined.value, stderr=res.combined.stderr,
                       acceptance_fraction=res.acceptance, tail_bound=res.tail_bound)
        run.warnings.append(f"windows below z_min contribute at most {res.tail_bound:.3e}")
    summary.update(prediction_scale=dict(rate_I=pr.rate_I, e_It=math.exp(pr.rate_I * args.t)))
    run.add("ldp.json", _json_text(_clean(summary)))
    run.finish()
    sys.stdout.write(_json_text(_clean(summary)))
    return 0


def cmd_tail_fit(args):
    if not (0 < args.theta < math.sqrt(2)):
        raise UsageError(f"--theta must lie in (0, sqrt(2)) (got {args.theta})")
    _positive(args, "T", "replicas")
    run = Run(args, "tail-fit")
    fit = E.martingale_tail(args.theta, args.T, args.replicas, _cfg(args, args.T), args.workers)
    d = dict(kappa_hat=fit.kappa_hat, kappa_theory=2 / args.theta**2, c_w_hat=fit.c_w_hat,
             fit_window=list(fit.fit_window), n=fit.n, mean_W=fit.mean_w,
             frac_positive=fit.frac_positive, envelope_max=fit.envelope_max)
    rows = [dict(quantity="kappa_hat", t=args.T, estimate=fit.kappa_hat, stderr=None, n=fit.n,
                 method="tail-fit", seed=args.seed),
            dict(quantity="c_w_hat", t=args.T, estimate=fit.c_w_hat, stderr=None, n=fit.n,
                 method="tail-fit", seed=args.seed)]
    run.estimates(rows)
    run.add("tail_fit.json", _json_text(_clean(d)))
    run.counts["replicas"] = args.replicas
    run.finish()
    sys.stdout.write(_json_text(_clean(d)))
    return 0


def cmd_conditioned(args):
    pr = _params(args)
    _positive(args, "t", "y", "replicas_per_window")
    run = Run(args, "conditioned")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cs = E.conditioned_stats(pr, args.t, args.y, list(range(int(args.z_min), int(args.z_max))),
                                 args.replicas_per_window, _cfg(args, args.t), args.workers)
    run.warnings += [str(w.message) for w in caught]
    d = _clean(cs.as_dict())
    d["targets"] = dict(pareto_index=pr.kappa,
                        overlap_var=(P.overlap_scale(pr) ** 2) * pr.sigma2_cond,
                        jump_pos_var=(P.jump_scale(pr) ** 2) * pr.sigma2_cond,
                        max_var=(P.max_scale(pr) ** 2) * pr.sigma2_cond)
    run.add("conditioned.json", _json_text(d))
    run.counts["per_window"] = args.replicas_per_window
    run.finish()
    sys.stdout.write(_json_text(d))
    return 0


def cmd_overlap(args):
    if not (0 <= args.beta < math.sqrt(2)):
        raise UsageError(f"--beta must lie in [0, sqrt(2)) (got {args.beta})")
    _positive(args, "T", "replicas")
    rs = [float(v) for v in args.r.split(",")]
    run = Run(args, "overlap")
    rows = []
    for r in rs:
        if not 0 <= r < args.T:
            raise UsageError(f"--r values must lie in [0, T) (got {r})")
    curve = O.overlap_limit_curve(args.beta, rs, args.T, args.replicas, args.seed, args.workers,
                                  args.max_particles)
    pairs = None
    if args.t_pair:
        pairs = O.overlap_pairs(args.beta, args.t_pair, args.replicas, args.seed, args.workers,
                                args.max_particles)
    for r, est in zip(rs, curve):
        rows.append(dict(quantity=f"OL(r={r:g})", t=args.T, estimate=est.value, stderr=est.stderr,
                         n=est.n, method=est.method, seed=args.seed))
        if pairs is not None:
            emp = O.overlap_empirical(args.beta, r, args.t_pair, pairs=pairs, seed=args.seed)
            rows.append(dict(quantity=f"P(R>={r:g})", t=args.t_pair, y=args.beta * args.t_pair, estimate=emp.value,
                             stderr=emp.stderr, n=emp.n, method=emp.method, seed=args.seed))
    run.estimates(rows)
    run.counts["replicas"] = args.replicas
    run.finish()
    sys.stdout.write(_csv_text(EST_COLUMNS, rows))
    return 0


def cmd_fpt_test(args):
    pr = _params(args)
    _positive(args, "t", "replicas")
    from scipy import stats

    level = pr.v_level(args.t, args.z)
    if level >= 0:
        raise UsageError(f"--z must keep the level below 0 (level={level:g})")
    run = Run(args, "fpt-test")
    taus = fpt_samples(pr, args.t, args.z, args.replicas, args.seed)
    igp = SP.IgParams(-level, pr.dpsi_kappa, pr.ddpsi_kappa)
    ks = stats.kstest(taus, lambda v: SP.ig_cdf(igp, v))
    s = pr.p * args.t
    d = dict(n=len(taus), mean=float(taus.mean()), mean_theory=igp.mean,
             norm_var=float(np.var((taus - s) / math.sqrt(s), ddof=1)),
             norm_var_theory=pr.ddpsi_kappa / pr.dpsi_kappa**2,
             ks_D=float(ks.statistic), ks_pvalue=float(ks.pvalue))
    run.add("fpt_test.json", _json_text(d))
    run.counts["replicas"] = args.replicas
    run.finish()
    sys.stdout.write(_json_text(d))
    return 0


def fpt_samples(pr, t, z, n, seed):
    """Spine passage times for replicas 0..n-1 (tree not built)."""
    out = np.empty(n)
    for r in range(n):
        out[r] = SP.sample_spine_fpt(pr, t, z, SimConfig(t, seed, r), build=False).stop_time
    return out


def cmd_trend(args):
    pr = _params(args)
    ts = [float(v) for v in args.t_list.split(",")]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise UsageError(f"--t-list must be increasing (got {args.t_list})")
    run = Run(args, "trend")
    rate = pr.rate_I + args.rate_offset
    rows = E.trend_e_it(pr, ts, args.y, args.method, SimConfig(max(ts), seed=args.seed,
                        max_particles=args.max_particles), args.replicas, args.workers, rate=rate)
    cols = ["t", "estimate", "stderr", "scaled", "lo", "hi", "ratio", "n"]
    run.add("trend.csv", _csv_text(cols, rows))
    run.estimates([dict(quantity="e_It_P", x=pr.x, a=pr.a, t=r["t"], y=args.y, estimate=r["scaled"],
                        stderr=r["stderr"] * math.exp(rate * r["t"]), n=r["n"], method=args.method,
                        seed=args.seed) for r in rows])
    run.finish()
    sys.stdout.write(_csv_text(cols, rows))
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="bbmld", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="key = value file mirroring the flags")
        sp.add_argument("--seed", type=int, default=0, help="root seed of every random stream")
        sp.add_argument("--workers", type=int, default=None, help="worker processes (default: all cores)")
        sp.add_argument("--max-particles", type=int, default=DEFAULT_MAX_PARTICLES,
                        help="population cap per replica (runtime error when exceeded)")
        sp.add_argument("--out", default=None, help="output directory (default: current)")

    def xa(sp):
        sp.add_argument("--x", type=float, help="slope of the level x*t, x > 0")
        sp.add_argument("--a", type=float, help="size exponent, (1 - x^2/2)_+ < a < 1")

    sp = sub.add_parser("params", help="derived scalars for (x, a) as JSON")
    xa(sp)
    common(sp)
    sp.set_defaults(func=cmd_params)

    sp = sub.add_parser("simulate", help="per-replica observables CSV")
    xa(sp)
    sp.add_argument("--t", type=float, required=False, help="horizon")
    sp.add_argument("--z", type=float, default=0.0, help="offset of the first-passage level")
    sp.add_argument("--replicas", type=int, default=100)
    sp.add_argument("--dump-tree", action="store_true", help="also write replica 0 as a segment CSV")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("estimate-ldp", help="estimate P(L_t(xt) >= y e^{at}/sqrt t)")
    xa(sp)
    sp.add_argument("--method", choices=("naive", "spine"), default="naive")
    sp.add_argument("--t", type=float, help="horizon")
    sp.add_argument("--y", type=float, default=1.0, help="threshold multiplier, y > 0")
    sp.add_argument("--replicas", type=int, default=10000, help="naive replicas")
    sp.add_argument("--z-min", type=float, default=-6.0, help="lowest unit window (spine)")
    sp.add_argument("--z-max", type=float, default=6.0, help="windows stop below this (spine)")
    sp.add_argument("--replicas-per-window", type=int, default=2000)
    common(sp)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("tail-fit", help="power-law tail of W_T(theta)")
    sp.add_argument("--theta", type=float, help="martingale parameter in (0, sqrt 2)")
    sp.add_argument("--T", type=float, default=8.0, help="time at which W is sampled")
    sp.add_argument("--replicas", type=int, default=50000)
    common(sp)
    sp.set_defaults(func=cmd_tail_fit)

    sp = sub.add_parser("conditioned", help="importance-weighted conditioned statistics")
    xa(sp)
    sp.add_argument("--t", type=float, help="horizon")
    sp.add_argument("--y", type=float, default=1.0, help="threshold multiplier, y > 0")
    sp.add_argument("--z-min", type=float, default=-6.0)
    sp.add_argument("--z-max", type=float, default=6.0)
    sp.add_argument("--replicas-per-window", type=int, default=2000)
    common(sp)
    sp.set_defaults(func=cmd_conditioned)

    sp = sub.add_parser("overlap", help="overlap formula OL(r, beta) and level-set pairs")
    sp.add_argument("--beta", type=float, help="martingale parameter in [0, sqrt 2)")
    sp.add_argument("--r", default="0,1,2,4", help="comma separated times")
    sp.add_argument("--T", type=float, default=10.0, help="horizon standing in for infinity")
    sp.add_argument("--t-pair", type=float, default=None, help="also estimate P(R >= r) at this t")
    sp.add_argument("--replicas", type=int, default=2000)
    common(sp)
    sp.set_defaults(func=cmd_overlap)

    sp = sub.add_parser("fpt-test", help="spine passage times against the inverse Gaussian law")
    xa(sp)
    sp.add_argument("--t", type=float, help="horizon")
    sp.add_argument("--z", type=float, default=0.0, help="offset of the passage level")
    sp.add_argument("--replicas", type=int, default=20000)
    common(sp)
    sp.set_defaults(func=cmd_fpt_test)

    sp = sub.add_parser("trend", help="e^{It} P(t) over a list of t")
    xa(sp)
    sp.add_argument("--t-list", default="6,8,10", help="comma separated, increasing")
    sp.add_argument("--y", type=float, default=1.0, help="threshold multiplier, y > 0")
    sp.add_argument("--method", choices=("naive", "spine"), default="naive")
    sp.add_argument("--replicas", type=int, default=10000)
    sp.add_argument("--rate-offset", type=float, default=0.0, help="added to I (negative control)")
    common(sp)
    sp.set_defaults(func=cmd_trend)
    return p


def _config_defaults(path):
    cp = configparser.ConfigParser()
    with open(path) as fh:
        text = fh.read()
    if not text.lstrip().startswith("["):
        text = "[bbmld]\n" + text
    cp.read_string(text)
    out = {}
    for sec in cp.sections():
        for k, v in cp.items(sec):
            out[k.replace("-", "_")] = v
    return out


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            conf = _config_defaults(args.config)
        except (OSError, configparser.Error) as e:
            raise UsageError(f"--config: cannot read {args.config}: {e}") from None
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        bad = sorted(k for k in conf if k not in known)
        if bad:
            raise UsageError(f"--config: unknown keys {bad}")
        typed = {}
        for k, v in conf.items():
            act = known[k]
            if act.type is not None:
                try:
                    typed[k] = act.type(v)
                except ValueError:
                    raise UsageError(f"--config: {k} = {v!r} is not a valid {act.type.__name__}") from None
            elif isinstance(act, argparse._StoreTrueAction):
                typed[k] = v.strip().lower() in ("1", "true", "yes", "on")
            else:
                typed[k] = v
        sub.set_defaults(**typed)
        args = parser.parse_args(argv)
    args.out_given = args.out is not None
    if args.out is None:
        args.out = "."
    if args.workers is None:
        args.workers = default_workers()
    if args.workers < 1:
        raise UsageError(f"--workers must be >= 1 (got {args.workers})")
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # argparse usage errors
        return int(e.code) if isinstance(e.code, int) else 2
    args._start = time.time()
    try:
        if getattr(args, "t", 0) is None and args.command not in ("params",):
            raise UsageError("--t is required")
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (PopulationCapExceeded, E.InsufficientTail, E.EmptySample, RuntimeError, ValueError, OSError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
