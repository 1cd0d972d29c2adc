"""Command line: ``sdinclusion {simulate,convergence,verify,plotdata}``.

Exit codes: 0 success, 2 configuration error, 3 simulation failure
(norm cap exceeded or a selection left its set), 4 I/O error, 5 a
hypothesis check failed.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import coefficients as co
from . import diagnostics as dg
from .config import ConfigError, build_scenario, load_config
from .semigroup import growth_envelope
from .storage import read_ensemble, write_ensemble
from .tonelli import BlowUpError, residual_Z, terminal_norms, tonelli_step_ensemble

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_IO, EXIT_VERIFY = 0, 2, 3, 4, 5

CONVERGENCE_HEADER = ["n", "dt", "paths", "seed", "res_mean", "res_p90", "bl_to_prev",
                      "sup_moment_p"]
SUMMARY_HEADER = ["n", "dt", "paths", "seed", "coord", "mean", "mean_se", "var", "var_se"]
HYPOTHESES_HEADER = ["hypothesis", "check", "value", "threshold", "verdict"]


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def _write_csv(path, header, rows, scenario_hash):
    with open(path, "w", newline="") as fh:
        fh.write(f"# scenario {scenario_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _out_dir(args, cfg):
    out = Path(args.out if args.out else cfg.get("output", "dir"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _setup(args):
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    sc, scheme, diag = build_scenario(cfg, seed=args.seed)
    return cfg, sc, scheme, diag


def _moments(x):
    P = x.size
    mean = math.fsum(x) / P
    c = x - mean
    var = math.fsum(c * c) / (P - 1) if P > 1 else 0.0
    m4 = math.fsum(c ** 4) / P
    mean_se = math.sqrt(var / P)
    var_se = math.sqrt(max(m4 - var * var, 0.0) / P)
    return mean, mean_se, var, var_se


def cmd_simulate(args):
    cfg, sc, scheme, _ = _setup(args)
    out = _out_dir(args, cfg)
    rows = []
    for n in scheme.n_ladder:
        ens = tonelli_step_ensemble(sc, n, scheme.dt, scheme.paths, scheme.seed,
                                    threads=args.threads,
                                    store_selections=scheme.store_selections)
        if cfg.get("output", "write_ensembles"):
            write_ensemble(out / f"ensemble_{n}.bin", ens, sc.dH)
        for i in range(sc.dE):
            m, mse, v, vse = _moments(ens.trajectories[:, -1, i])
            rows.append([n, scheme.dt, scheme.paths, scheme.seed, i, m, mse, v, vse])
    _write_csv(out / "summary.csv", SUMMARY_HEADER, rows, sc.scenario_hash())
    return EXIT_OK


def _unit_diffusion(dE, dH):
    g = np.zeros((dE, dH))
    for i in range(min(dE, dH)):
        g[i, i] = 1.0
    g /= np.linalg.norm(g)
    return lambda t: g


def _conv_dt(T, dt):
    return dt if abs(round(T / 8 / dt) * dt - T / 8) <= 1e-12 * T else T / 256


def cmd_convergence(args):
    cfg, sc, scheme, diag = _setup(args)
    out = _out_dir(args, cfg)
    p = sc.hyp.p
    report = dg.DiagnosticsReport()
    conv = dg.convolution_inequality_check(
        sc.op, _unit_diffusion(sc.dE, sc.dH), p, [sc.T / 8, sc.T / 4, sc.T / 2, sc.T],
        diag.conv_paths, scheme.seed, dt=_conv_dt(sc.T, scheme.dt))
    report.conv_constant_fit = conv.fit_Cp
    report.verdicts["conv_stable"] = conv.verdict == "pass"

    rows, kept, prev = [], [], None
    gronwall_ok = True
    for n in scheme.n_ladder:
        ens = tonelli_step_ensemble(sc, n, scheme.dt, scheme.paths, scheme.seed,
                                    threads=args.threads,
                                    store_selections=scheme.store_selections)
        Z = residual_Z(sc, ens, recompute=not scheme.store_selections)
        r = terminal_norms(Z)
        res_mean = math.fsum(r) / r.size
        report.residual_table[n] = (res_mean, float(np.percentile(r, 90)))
        bl = None
        if prev is not None:
            bl = dg.bl_distance(prev, ens, diag.bl_anchors, scheme.seed)
            report.bl_matrix[(prev.n, n)] = bl
        sm = dg.sup_moment(ens, p)
        gw = dg.gronwall_bound(sc, ens, conv.fit_Cp)
        gronwall_ok &= gw.passed
        rows.append([n, scheme.dt, scheme.paths, scheme.seed, res_mean,
                     report.residual_table[n][1], bl, sm[0]])
        report.sup_moment_p, report.gronwall_lhs, report.gronwall_bound = sm, \
            (gw.lhs, gw.lhs_se), gw.bound
        if diag.cover_radii:
            kept.append(ens)
        prev = ens
    means = [report.residual_table[n][0] for n in scheme.n_ladder]
    report.verdicts["residual_decreasing"] = all(b < a for a, b in zip(means, means[1:]))
    report.verdicts["gronwall"] = bool(gronwall_ok)
    if diag.aldous_deltas:
        report.aldous_table = dg.aldous_statistic(prev, diag.aldous_deltas, diag.aldous_eta)
    if diag.cover_radii:
        report.noncompactness = dg.noncompactness_proxy(kept, diag.cover_radii,
                                                        diag.cover_anchors)
    h = sc.scenario_hash()
    _write_csv(out / "convergence.csv", CONVERGENCE_HEADER, rows, h)
    report.write_csv(out / "report.csv", h)
    report.write_json(out / "report.json")
    return EXIT_OK


def verify_rows(sc, diag):
    """One (hypothesis, check, value, threshold, passed) row per check."""
    rows = []
    T, p, hyp = sc.T, sc.hyp.p, sc.hyp
    M, omega, C_B = growth_envelope(sc.op, T)
    ts = np.linspace(0.0, T, 65)
    worst = max(np.linalg.norm(sc.op.propagator(t), 2) / (M * math.exp(omega * t)) for t in ts)
    rows.append(("H_A", "semigroup_envelope", worst, 1.0, worst <= 1 + 1e-9))

    states = co.sample_states(sc.dE, T, diag.samples, diag.box, seed=1)
    pairs = co.sample_pairs(sc.dE, T, diag.samples, diag.box, seed=2)
    for name, M_ in (("F", sc.F), ("G", sc.G)):
        g = co.check_growth(M_, hyp, states)
        rows.append(("H_FG", f"growth_{name}", g.worst_ratio, 1.0, g.passed))
        m = co.check_modulus(M_, hyp, pairs)
        rows.append(("H_FG", f"modulus_{name}", m.max_ratio, 1.0, m.passed))
    shape = hyp.modulus.shape_report(T)
    rows.append(("H_FG", "modulus_shape", 1.0 if shape["nondecreasing"] else 0.0, 1.0,
                 shape["nondecreasing"] and shape["zero_at_origin"]))
    for k in diag.osgood_k:
        res = co.osgood_iterate(hyp.modulus, k, T, diag.osgood_R0, diag.osgood_grid,
                                diag.osgood_iters)
        rows.append(("H_FG", f"osgood_k={_fmt(k)}:{res.verdict}", res.limit_sup,
                     1e-8 * res.R0, res.verdict == "osgood_pass"))
    if sc.xi.deterministic:
        moment = float(np.linalg.norm(sc.xi.mean)) ** p
    else:
        moment = float(np.mean(np.linalg.norm(sc.xi.sample(0, range(10000)), axis=1) ** p))
    rows.append(("H_xi", "pth_moment", moment, math.inf, math.isfinite(moment)))
    return rows


def cmd_verify(args):
    cfg, sc, _, diag = _setup(args)
    out = _out_dir(args, cfg)
    rows = verify_rows(sc, diag)
    _write_csv(out / "hypotheses.csv", HYPOTHESES_HEADER,
               [(h, c, v, t, "pass" if ok else "fail") for h, c, v, t, ok in rows],
               sc.scenario_hash())
    failed = [f"{h}/{c}" for h, c, _, _, ok in rows if not ok]
    if failed:
        print("verify: failed " + ", ".join(failed), file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def _write_dat(path, header, rows):
    with open(path, "w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for r in rows:
            fh.write(" ".join(_fmt(v) for v in r) + "\n")


def cmd_plotdata(args):
    src = Path(args.input)
    out = Path(args.out) if args.out else src.parent
    out.mkdir(parents=True, exist_ok=True)
    if src.suffix == ".bin":
        ens = read_ensemble(src)
        dE = ens.trajectories.shape[2]
        for i in range(dE):
            x = ens.trajectories[:, :, i]
            mean = x.mean(axis=0)
            se = x.std(axis=0, ddof=1) / math.sqrt(ens.paths) if ens.paths > 1 else 0 * mean
            name = "mean_vs_t.dat" if dE == 1 else f"mean_vs_t_{i}.dat"
            _write_dat(out / name, ["t", "mean", "std_error"], zip(ens.times, mean, se))
        return EXIT_OK
    try:
        with open(src) as fh:
            rep = dg.DiagnosticsReport.from_dict(json.load(fh))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise OSError(f"{src}: not a readable report ({exc})") from None
    sections = [
        ("residual_vs_n.dat", ["n", "res_mean"],
         [(n, rep.residual_table[n][0]) for n in sorted(rep.residual_table)]),
        ("aldous_vs_delta.dat", ["delta", "probability"],
         [(d, rep.aldous_table[d]) for d in sorted(rep.aldous_table)]),
        ("bl_vs_n.dat", ["n", "bl_to_prev"],
         [(k[1], v) for k, v in sorted(rep.bl_matrix.items(), key=lambda kv: kv[0][1])]),
    ]
    if "radii" in rep.noncompactness:
        sections.append(("uncovered_vs_radius.dat", ["radius", "uncovered"],
                         list(zip(rep.noncompactness["radii"], rep.noncompactness["pooled"]))))
    else:
        sections.append(("uncovered_vs_radius.dat", ["radius", "uncovered"], []))
    for name, header, rows in sections:
        if not rows:
            print(f"plotdata: empty section, {name} not written", file=sys.stderr)
            continue
        _write_dat(out / name, header, rows)
    return EXIT_OK


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="scenario file")
    common.add_argument("--seed", type=_u64, default=argparse.SUPPRESS,
                        help="override [scheme] seed")
    common.add_argument("--threads", type=_positive, default=argparse.SUPPRESS,
                        help="worker threads (results do not depend on it)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    parser = argparse.ArgumentParser(prog="sdinclusion", parents=[common],
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate the n-ladder ensembles")
    sub.add_parser("convergence", parents=[common], help="residual and law-distance ladder")
    sub.add_parser("verify", parents=[common], help="check the coefficient hypotheses")
    pd = sub.add_parser("plotdata", parents=[common], help="write .dat files for plotting")
    pd.add_argument("input", help="report.json or ensemble_<n>.bin")
    return parser


COMMANDS = {"simulate": cmd_simulate, "convergence": cmd_convergence, "verify": cmd_verify,
            "plotdata": cmd_plotdata}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    for name, default in (("config", None), ("seed", None), ("threads", 1), ("out", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BlowUpError, co.SelectionError) as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
