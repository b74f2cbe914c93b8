"""Command-line interface: ``branchwalk <command> [options]``.

Relative ``--output`` paths resolve against ``$BRANCHWALK_OUTPUT_DIR``.
Exit status is 0 on success (for ``verify-example``: all assertions pass),
1 on failed assertions or model errors and 2 on usage errors.
"""
from __future__ import annotations

import argparse
import ast
import sys

import numpy as np

from branchwalk import ctbrw, genfun, io, mc, model as model_mod, project, spectral, verify
from branchwalk.model import ModelError


def _site(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _sites(text: str | None):
    if text is None:
        return None
    return [_site(t) for t in text.split(",") if t.strip()]


def _params(items) -> dict:
    out = {}
    for it in items or []:
        if "=" not in it:
            raise ModelError(f"--param expects key=value, got {it!r}")
        k, v = it.split("=", 1)
        out[k.strip()] = _site(v.strip())
    return out


def _load(args):
    m = io.load_model(args.model, **_params(args.param))
    if args.window is not None:
        m = model_mod.truncate(m, args.window)
    if args.policy:
        m = m.with_policy(args.policy)
    return m


def _emit(args, payload, header=None, rows=None):
    """Write ``payload`` (JSON) or ``rows`` (CSV) to --output or stdout."""
    if args.format == "csv" and header is not None:
        text = io.csv_text(header, rows)
    else:
        text = io.dumps_json(payload)
    if args.output:
        path = io.write_text(text, args.output)
        print(f"wrote {path}", file=sys.stderr)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_analyze(args) -> int:
    m = _load(args)
    x = _site(args.site) if args.site is not None else m.sites[0]
    A = _sites(args.A) or [x]
    classes = model_mod.irreducible_classes(m)
    a1 = model_mod.check_assumption1(m)
    ms = spectral.estimate_Ms(m, x)
    mw = spectral.estimate_Mw(m, x)
    local = spectral.local_survival_test(m, x)
    cls = genfun.classify(m, x, A, args.tol)
    payload = {
        "model": m.tag, "params": dict(m.params), "sites": len(m.sites), "policy": m.policy,
        "classes": len(classes.classes), "irreducible": bool(classes.irreducible),
        "assumption_per_class": [bool(v) for v in a1],
        "max_row_sum": float(model_mod.first_moment(m).row_sums().max()),
        "M_s": {"value": ms.value, "method": ms.method, "bound": ms.bound},
        "M_w": {"value": mw.value, "method": mw.method, "bound": mw.bound},
        "local_survival": {"survives": local.survives, "indeterminate": local.indeterminate,
                           "near_critical": local.near_critical, "estimate": local.estimate,
                           "method": local.method},
        "classification": {"x": repr(x), "A": [repr(a) for a in A], "regime": cls.regime,
                           "q_bar": cls.q_bar, "q_local": cls.q_local,
                           "inconclusive": cls.inconclusive, "note": cls.note},
    }
    _emit(args, payload)
    return 0


def cmd_extinction(args) -> int:
    m = _load(args)
    A = _sites(args.A)
    if args.never_visit:
        if not A:
            raise ModelError("--never-visit needs --A")
        rep, kind = genfun.never_visit_prob(m, A, args.tol), "never-visit"
    elif A:
        rep, kind = genfun.local_extinction(m, A, args.tol), "local"
    else:
        rep, kind = genfun.global_extinction(m, args.tol), "global"
    payload = {"kind": kind, "policy": rep.policy, "iterations": rep.iterations,
               "residual": rep.residual, "converged": rep.converged, "monotone": rep.monotone,
               "direction": rep.direction,
               "values": [[repr(s), float(v)] for s, v in zip(m.sites, rep.values)]}
    _emit(args, payload, ["site", "value"],
          [(repr(s) if not isinstance(s, int) else s, float(v))
           for s, v in zip(m.sites, rep.values)])
    return 0 if rep.converged else 1


def cmd_fixed_points(args) -> int:
    if args.family:
        kind = args.family
        prm = _params(args.param)
        p = float(prm.get("p", 0.7 if kind == "reducible" else 2 / 3))
        eps = float(prm.get("eps", 0.0 if kind == "reducible" else 1 / 9))
        fam = genfun.fixedpoint_family(kind, p, eps, args.z0, args.n_max)
        payload = {"kind": kind, "p": p, "eps": eps, "z0": args.z0, "valid": fam.valid,
                   "residual": fam.residual, "first_failure": fam.first_failure,
                   "z": fam.z}
        _emit(args, payload, ["n", "z"], [(n, float(z)) for n, z in enumerate(fam.z)])
        return 0 if fam.valid else 1
    m = _load(args)
    if args.mesh:
        rows = genfun.ug_mesh(m, args.resolution or 200)
        _emit(args, {"rows": rows}, ["axis", "a", "b", "c_low", "c_high"], rows)
        return 0
    fps = genfun.enumerate_fixed_points(m, args.resolution)
    w = genfun.convexity_witness(m, seed=args.seed)
    payload = {"fixed_points": [f.values for f in fps],
               "convexity_witness": None if w is None else
               {"z": w.z, "w": w.w, "t": w.t, "component": repr(w.component), "gap": w.gap}}
    _emit(args, payload, [f"z({s!r})" for s in m.sites], [tuple(f.values) for f in fps])
    return 0


def _grid(text):
    if text is None or text == "default":
        return None
    if ":" in text:
        lo, hi, n = text.split(":")
        return np.geomspace(float(lo), float(hi), int(n))
    return [float(t) for t in text.split(",") if t.strip()]


def cmd_phase(args) -> int:
    ct = ctbrw.tree_ct(args.d, args.radius)
    ct_mod = ctbrw.add_loop(ct, 0, args.loop)
    pd = ctbrw.classify_phase(ct, ct_mod, [0], 0, _grid(args.lambda_grid), args.tol)
    rows = [(r.lam, r.regime, r.q_bar, r.q_local) for r in pd.rows]
    payload = {"lambda_s": pd.params_original.lambda_s, "lambda_w": pd.params_original.lambda_w,
               "lambda_mod": pd.lambda_mod, "hypothesis": pd.hypothesis,
               "sequence": pd.sequence(),
               "unflagged_disagreements": [r.lam for r in pd.unflagged_disagreements()],
               "rows": [r for r in pd.rows]}
    _emit(args, payload, ["lambda", "regime", "q_bar", "q_local"], rows)
    return 0 if not pd.unflagged_disagreements() else 1


def cmd_simulate(args) -> int:
    m = _load(args)
    x = _site(args.site) if args.site is not None else m.sites[0]
    A = _sites(args.A)
    cfg = mc.SimConfig(seed=args.seed, replicates=args.replicates, horizon=args.horizon,
                       cap=args.cap, A=A, threads=args.threads)
    if A is not None and args.regime:
        near = spectral.local_survival_test(m, x).near_critical
        r = mc.estimate_regime(m, x, A, cfg, near_critical=near, tol=args.tol)
        payload = {"regime": r.regime, "inconclusive": r.inconclusive,
                   "analytic": r.analytic.regime, "agrees": r.agrees, "inside": r.inside,
                   "warnings": list(r.warnings), **r.outcome.summary()}
        out = r.outcome
    else:
        out = mc.simulate(m, x, cfg)
        payload = out.summary()
    rows = [(i, bool(a), bool(v), int(lv), bool(lo), bool(c), int(g))
            for i, (a, v, lv, lo, c, g) in enumerate(zip(out.alive, out.visited, out.last_visit,
                                                          out.local, out.censored,
                                                          out.generations))]
    _emit(args, payload,
          ["replicate", "alive", "visited", "last_visit", "local", "censored", "generations"],
          rows)
    return 0


def cmd_project(args) -> int:
    src = _load(args)
    if args.target is None:
        h = project.detect_bp_like(src)
        payload = {"bp_like": h is not None}
        if h is not None:
            fps = project.bp_fixed_points(h)
            tgt = project.bp_target(h)
            chk = project.pushforward_extinction_check(src, tgt, project.ProjectionMap.constant())
            payload.update(mean=h.mean(), fixed_points=fps, pullback_gap=chk.gap,
                           boundary_gap=chk.boundary_gap, ok=chk.ok)
        _emit(args, payload)
        return 0
    dst = io.load_model(args.target)
    g = io.load_projection(args.map, src)
    rep = project.validate_projection(src, dst, g, seed=args.seed)
    chk = project.pushforward_extinction_check(src, dst, g)
    payload = {"valid": rep.valid, "surjective": rep.surjective,
               "mismatches": [[repr(x), why] for x, why in rep.mismatches],
               "identity_gap": rep.max_identity_gap, "pullback_gap": chk.gap,
               "boundary_gap": chk.boundary_gap}
    _emit(args, payload)
    return 0 if rep.valid and chk.ok else 1


def cmd_verify(args) -> int:
    """Per-assertion table on stderr; JSON report on stdout or --output."""
    tags = list(verify.SUITES) if args.tag == "all" else [args.tag]
    reports = [verify.verify_example(t) for t in tags]
    for rep in reports:
        print(f"== {rep.tag}  ({rep.seconds:.2f} s)", file=sys.stderr)
        for name, status, value, expected, tol, detail in rep.table():
            extra = "  ".join(s for s in (f"value={value}" if value else "",
                                          f"expected={expected}" if expected else "",
                                          f"tol={tol}" if tol else "", detail) if s)
            print(f"  [{status}] {name}  {extra}".rstrip(), file=sys.stderr)
    ok = all(r.passed for r in reports)
    payload = {"passed": ok, "reports": [
        {"tag": r.tag, "passed": r.passed, "seconds": round(r.seconds, 3),
         "checks": list(r.checks)} for r in reports]}
    if args.output:
        path = io.write_json(payload, args.output)
        print(f"wrote {path}", file=sys.stderr)
        for r in reports:
            for name, (header, rows) in r.tables.items():
                p = io.write_csv(header, rows, path.with_name(f"{path.stem}-{r.tag}-{name}.csv"))
                print(f"wrote {p}", file=sys.stderr)
    else:
        sys.stdout.write(io.dumps_json(payload))
    print("ALL PASS" if ok else "FAILED", file=sys.stderr)
    return 0 if ok else 1


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", default="counterexample1",
                        help="registered tag or path to a JSON model file")
    common.add_argument("--param", action="append", metavar="KEY=VALUE",
                        help="builder parameter (repeatable)")
    common.add_argument("--window", type=int, help="window size (N or tree radius)")
    common.add_argument("--policy", choices=("ghost-survive", "ghost-die"))
    common.add_argument("--tol", type=float, default=genfun.DEFAULT_TOL)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--output", help="output file (relative to $%s)" % io.OUTPUT_DIR_ENV)

    p = argparse.ArgumentParser(prog="branchwalk", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", parents=[common], help="classes, growth rates, regime")
    a.add_argument("--site")
    a.add_argument("--A", help="comma-separated target sites (default: the site itself)")
    a.set_defaults(func=cmd_analyze)

    e = sub.add_parser("extinction", parents=[common], help="extinction probability vectors")
    e.add_argument("--A", help="comma-separated target sites for extinction in A")
    e.add_argument("--never-visit", action="store_true",
                   help="probability of never visiting A instead")
    e.set_defaults(func=cmd_extinction)

    f = sub.add_parser("fixed-points", parents=[common],
                       help="fixed points, U_G mesh or fixed-point families")
    f.add_argument("--resolution", type=int)
    f.add_argument("--mesh", action="store_true", help="U_G height mesh (three-site models)")
    f.add_argument("--family", choices=("reducible", "irreducible"))
    f.add_argument("--z0", type=float, default=0.8)
    f.add_argument("--n-max", type=int, default=200)
    f.set_defaults(func=cmd_fixed_points)

    ph = sub.add_parser("phase", parents=[common], help="tree phase diagram with a root loop")
    ph.add_argument("--d", type=int, default=4)
    ph.add_argument("--loop", type=float, default=5.0)
    ph.add_argument("--radius", type=int, default=200)
    ph.add_argument("--lambda-grid",
                    help="'default', comma list, or lo:hi:n (geometric spacing)")
    ph.set_defaults(func=cmd_phase)

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo survival estimates")
    s.add_argument("--site")
    s.add_argument("--A")
    s.add_argument("--replicates", type=int, default=10_000)
    s.add_argument("--horizon", type=int, default=200)
    s.add_argument("--cap", type=int, default=mc.DEFAULT_CAP)
    s.add_argument("--threads", type=int)
    s.add_argument("--regime", action="store_true",
                   help="estimate the survival regime and compare with the analytic one")
    s.set_defaults(func=cmd_simulate)

    pr = sub.add_parser("project", parents=[common], help="projections and BP reductions")
    pr.add_argument("--target", help="target model (omit to test for a BP reduction)")
    pr.add_argument("--map", help="JSON projection map file")
    pr.set_defaults(func=cmd_project)

    v = sub.add_parser("verify-example", parents=[common], help="run an example's check suite")
    v.add_argument("tag", choices=list(verify.SUITES) + ["all"])
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "project" and args.target is not None and args.map is None:
        build_parser().error("project --target needs --map")
    try:
        return args.func(args)
    except (ModelError, genfun.FamilyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
