"""Command line: ``sdfree {check, normalize, validate, calibrate}``.

Exit codes: 0 success, 1 mathematical or check failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, build_instance, load_config, truncation
from .constants import load_constants

log = logging.getLogger("sdfree")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
REPORT_SCHEMA = 1

# interpretation choices echoed into every report
INTERPRETATIONS = {
    "dfrak": "min(rho*s, r*xi, delta^2): sigma read as the angle width s",
    "inv_omega_r_norm": "|1/omega_r| (constant frequencies)",
    "bracket": "{f,g} = sum dP f dQ g - dQ f dP g over (r,x), (I,phi), (q,p)",
    "diagonal_action": "{phi, H0} = -D_omega phi, lambda = (h-j).omega_J + i k.omega_I",
    "unperturbed_pq": "p(t) = p e^{+omega_J t}, q(t) = q e^{-omega_J t}",
    "schedule": "N+1 steps: opening step (r/6, rho/6, xi/6, s/9, delta/9), then N steps "
                "(r/(6N), rho/(6N), xi/(6N), s/(9N), delta/(9N)); stronger variant throughout",
    "third_condition": "checked with ||f|| (implies the ||f~|| version)",
    "norms": "certified majorants (upper bounds) on polydisks around the basepoint",
}


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _write(out: Path | None, name: str, text: str):
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _constants(cfg: RunConfig, verbose: bool = False) -> dict:
    spec = cfg.normalization.constants
    if spec == "calibrated":
        k = load_constants()
        return {"cbar": k["cbar"], "ctilde": k["ctilde"], "c": k["c"], "source": k.get("source"),
                "corpus_hash": k.get("corpus_hash")}
    if spec == "calibrate":
        res = _run_calibration(cfg, verbose)
        return dict(res.constants())
    return {"cbar": spec.cbar, "ctilde": spec.ctilde, "c": spec.c, "source": "config"}


def _run_calibration(cfg: RunConfig, verbose: bool = False):
    from .instances import random_corpus
    from .normalform import calibrate_constant

    cal = cfg.calibration
    corpus = random_corpus(cal.seed, cal.count)
    prog = (lambda i, r: log.info("calibration %s: %s", i, {k: v for k, v in r.items()
                                                              if k != "lie_norms"})) if verbose else None
    return calibrate_constant(corpus, trunc=truncation(cfg), fraction=cal.fraction, progress=prog)


def _norm_config(cfg: RunConfig, consts: dict):
    from .normalform import NormalizationConfig

    n = cfg.normalization
    return NormalizationConfig(N=n.N, cbar=consts["cbar"], ctilde=consts["ctilde"], c=consts["c"],
                               trunc=truncation(cfg), tol=n.tol, jmax_cap=n.jmax_cap,
                               prune=n.prune, residual_tol=n.residual_tol,
                               variant=n.schedule_variant)


def _header(cfg: RunConfig, command: str, consts: dict) -> dict:
    return {"schema": REPORT_SCHEMA, "command": command, "run_config": cfg.echo(),
            "constants": consts, "interpretations": INTERPRETATIONS}


# -- commands --------------------------------------------------------------------------

def cmd_check(cfg: RunConfig, out: Path | None, verbose: bool = False) -> int:
    from .normalform import check_assumptions

    consts = _constants(cfg, verbose)
    H0, f, dom = build_instance(cfg, c=consts["c"])
    ncfg = _norm_config(cfg, consts)
    rep = check_assumptions(H0, f, dom, ncfg)
    doc = _header(cfg, "check", consts)
    doc["assumptions"] = rep.as_dict()
    doc["ok"] = bool(rep.ok)
    _write(out, "check.json", _dumps(doc))
    for name, c in rep.conditions.items():
        print(f"{name}: lhs={c['lhs']:.6g} rhs={c['rhs']:.6g} margin={c['margin']:.6g} "
              f"{'ok' if c['ok'] else 'VIOLATED'}")
    print(f"schedule feasible: {rep.schedule_ok}")
    print(f"max admissible N: {rep.max_N}")
    print(f"max admissible ||f||: {rep.max_norm_f:.6g}")
    if not rep.ok:
        bad = [k for k, c in rep.conditions.items() if not c["ok"]]
        if not rep.schedule_ok:
            bad.append("schedule")
        print(f"violated: {', '.join(bad)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_normalize(cfg: RunConfig, out: Path | None, verbose: bool = False) -> int:
    from .normalform import AssumptionError, HalvingError, normalize
    from .validation import dump_normal_form

    consts = _constants(cfg, verbose)
    H0, f, dom = build_instance(cfg, c=consts["c"])
    ncfg = _norm_config(cfg, consts)
    doc = _header(cfg, "normalize", consts)
    try:
        res = normalize(H0, f, dom, ncfg)
    except (AssumptionError, HalvingError, ArithmeticError) as exc:
        doc["ok"] = False
        doc["error"] = {"type": type(exc).__name__, "message": str(exc),
                        "inequality": getattr(exc, "name", None)}
        rep = getattr(exc, "report", None)
        if rep is not None and hasattr(rep, "as_dict"):
            doc["partial_report"] = rep.as_dict()
        _write(out, cfg.outputs.report, _dumps(_clean(doc)))
        print(f"normalize failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    rep = res.report
    doc.update(rep.as_dict())
    doc["command"] = "normalize"
    doc["ok"] = bool(rep.theses["remainder"]["ok"] and rep.ledger_ok)
    _write(out, cfg.outputs.report, _dumps(_clean(doc)))
    _write(out, cfg.outputs.steps_csv, rep.to_csv())
    _write(out, cfg.outputs.g_N, res.g.dumps())
    _write(out, cfg.outputs.f_N, res.f.dumps())
    if out is not None:
        dump_normal_form(out / cfg.outputs.normal_form, H0 + f, res)
    fin = rep.final
    for r in rep.steps:
        print(f"step {r['step']}: ||f||={r['norm_f']:.6g} ||phi||={r['norm_phi']:.6g} "
              f"ratio={r['ratio']:.6g}")
    print(f"||f_N||/||f|| = {fin['ratio']:.6g} (thesis 1/2^(N+1) = {0.5 ** (cfg.normalization.N + 1):.6g})")
    return EXIT_OK if doc["ok"] else EXIT_FAIL


def cmd_validate(cfg: RunConfig, out: Path | None, verbose: bool = False,
                 base: Path | None = None) -> int:
    from .validation import clock_check, conjugacy_check, load_normal_form, solver_check

    checks = list(cfg.validation.checks)
    doc = {"schema": REPORT_SCHEMA, "command": "validate", "run_config": cfg.echo(),
           "interpretations": INTERPRETATIONS, "checks": {}}
    if not checks:
        doc["note"] = "no checks requested"
        doc["ok"] = True
        _write(out, cfg.outputs.metrics, _dumps(doc))
        print("no checks requested")
        return EXIT_OK
    rng = np.random.default_rng(cfg.seed)
    v = cfg.validation
    failed = []
    for name in checks:
        if name == "conjugacy":
            art = _normal_form_for(cfg, out, base, verbose)
            if art is None:
                return EXIT_FAIL
            m = conjugacy_check(art.H, art.HN, art.generators, art.domain, art.scale, rng,
                                points=v.points, tol_factor=v.tol_factor)
        elif name == "clock":
            c = v.clock
            m, trajs = clock_check(c.eps, c.r_star, c.x_star, c.horizon, c.sample, c.tol,
                                   c.threshold, c.window)
            if out is not None:
                tdir = out / cfg.outputs.trajectories_dir
                tdir.mkdir(parents=True, exist_ok=True)
                for key, tr in trajs.items():
                    tr.to_csv(tdir / f"clock_{key}.csv")
        else:
            m = solver_check(rng, v.solver_instances)
        doc["checks"][name] = m
        status = "ok" if m["ok"] else "FAILED"
        print(f"{name}: {status}")
        if not m["ok"]:
            failed.append(name)
    doc["ok"] = not failed
    doc["failed"] = failed
    _write(out, cfg.outputs.metrics, _dumps(_clean(doc)))
    if failed:
        print(f"failing checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _normal_form_for(cfg, out, base, verbose):
    """Stored normal form if the config names one, else a fresh ``normalize`` run."""
    from .normalform import normalize
    from .validation import NormalFormArtifact, load_normal_form

    path = cfg.validation.normal_form_file
    if path is not None:
        p = Path(path)
        if not p.is_absolute() and base is not None:
            p = base / p
        return load_normal_form(p)
    consts = _constants(cfg, verbose)
    H0, f, dom = build_instance(cfg, c=consts["c"])
    try:
        res = normalize(H0, f, dom, _norm_config(cfg, consts))
    except ArithmeticError as exc:
        print(f"conjugacy: normalization failed: {exc}", file=sys.stderr)
        return None
    fin = res.report.final
    return NormalFormArtifact(H0.space, H0 + f, res.g, res.f, res.generators, res.domain,
                              fin["norm_f_N"] + fin["total_tail"] + fin["total_dropped"])


def cmd_calibrate(cfg: RunConfig, out: Path | None, verbose: bool = False) -> int:
    res = _run_calibration(cfg, verbose)
    doc = res.as_dict()
    doc["run_config"] = cfg.echo()
    _write(out, "calibration.json", _dumps(_clean(doc)))
    _write(out, cfg.outputs.constants, _dumps(res.constants()))
    print(f"cbar={res.cbar:g} ctilde={res.ctilde:g} c={res.c:g} "
          f"(corpus {res.n_instances} instances, hash {res.corpus_hash[:12]})")
    print(f"certificates: {res.certificates}")
    return EXIT_OK


def _clean(obj):
    from .normalform import _jsonable
    return _jsonable(obj)


COMMANDS = {"check": cmd_check, "normalize": cmd_normalize, "validate": cmd_validate,
            "calibrate": cmd_calibrate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdfree", description="Small-divisor-free normal forms.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="YAML run configuration")
        s.add_argument("--out", type=Path, help="directory for reports and artifacts")
        s.add_argument("--seed", type=int, help="seed for randomized checks (u64)")
        s.add_argument("--precision", choices=["double", "extended"])
        s.add_argument("--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.with_overrides(seed=args.seed, precision=args.precision)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # pydantic errors from overrides
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    fn = COMMANDS[args.command]
    kw = {"verbose": args.verbose}
    if args.command == "validate":
        kw["base"] = args.config.parent if args.config else None
    try:
        return fn(cfg, args.out, **kw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
