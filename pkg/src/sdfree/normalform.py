"""Iterated normalization of ``H = H0 + f`` with proper-degenerate ``H0``.

One step removes the zero-average part of the remainder with the generator
from :func:`sdfree.homological.solve_homological` and pushes the average into
the normal part ``g``.  :func:`normalize` chains the steps on the fixed width
schedule and checks every inequality along the way with certified norms.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .constants import load_constants
from .homological import shrunk_domain, solve_homological
from .lie import DivergenceError, lie_powers, transform_hamiltonian
from .norms import DomainSpec, Widths, norm_params, weighted_norm
from .series import (SeriesError, TFSeries, TruncationOrders, max_relative_difference,
                     normal_mask, project_average, unique_rows)

__all__ = [
    "AssumptionError",
    "HalvingError",
    "StepParams",
    "NormalizationConfig",
    "StepResult",
    "NormalizationReport",
    "NormalizationResult",
    "AssumptionReport",
    "make_step",
    "schedule",
    "check_assumptions",
    "iterative_step",
    "normalize",
    "ledger_identity",
    "calibrate_constant",
    "CalibrationResult",
]

REPORT_SCHEMA = 1
_RTOL = 1e-12


class AssumptionError(ValueError):
    """A named inequality required by a step or by the driver fails."""

    def __init__(self, message, name=None, report=None):
        super().__init__(message)
        self.name = name
        self.report = report


class HalvingError(ArithmeticError):
    """Measured remainder did not halve; the constants are miscalibrated."""

    def __init__(self, message, ratio=None, report=None):
        super().__init__(message)
        self.ratio = ratio
        self.report = report


def _cond(lhs, rhs, strict=True) -> dict:
    lhs, rhs = float(lhs), float(rhs)
    ok = lhs < rhs if strict else lhs <= rhs
    margin = 1.0 - lhs / rhs if rhs > 0 else (math.inf if lhs < rhs else -math.inf)
    return {"lhs": lhs, "rhs": rhs, "ok": bool(ok), "margin": margin}


# -- step geometry -------------------------------------------------------------

@dataclass(frozen=True)
class StepParams:
    """Width bookkeeping of one step.

    ``dom1`` carries the generator, ``dom_lie = dom1 - primed`` is where the
    Lie series is estimated and ``dom_out = dom_lie - primed`` is the output.
    """

    index: int
    variant: str
    domain: DomainSpec
    primed: Widths
    d: float
    dom1: DomainSpec
    dom_lie: DomainSpec
    dom_out: DomainSpec
    conditions: dict
    admissible: bool

    def as_dict(self) -> dict:
        return {"index": self.index, "variant": self.variant,
                "widths": self.domain.widths.as_dict(), "primed": self.primed.as_dict(),
                "d": self.d, "X": self.domain.X, "widths_1": self.dom1.widths.as_dict(),
                "widths_out": self.dom_out.widths.as_dict(), "conditions": self.conditions,
                "admissible": self.admissible}


def make_step(dom: DomainSpec, primed: Widths, freq=None, variant: str = "stronger",
              index: int = 0) -> StepParams:
    """Intermediate and output domains of one step from the primed widths.

    ``variant='standard'`` uses ``s_1 = s - X||w_I/w_r||``,
    ``delta_1 = delta e^{-X||w_J/w_r||}``, ``s_+ = s_1 - 2s'``,
    ``delta_+ = delta_1 - 2 delta'``; ``'stronger'`` uses ``s_1 = s - s'``,
    ``delta_1 = delta - delta'`` and ``s_+ = s - 3s'``, ``delta_+ = delta - 3 delta'``.
    In both ``r_+ = r - 2r'`` and likewise for ``rho``, ``xi``.  ``freq`` is
    needed for the standard widths and for the frequency conditions.
    """
    w, p, X = dom.widths, primed, dom.X
    conds = {"2r'<r": _cond(2 * p.r, w.r), "2rho'<rho": _cond(2 * p.rho, w.rho),
             "2xi'<xi": _cond(2 * p.xi, w.xi)}
    aI = X * freq.ratio_I if freq is not None else None
    aJ = X * freq.ratio_J if freq is not None else None
    if variant == "stronger":
        s1, d1 = w.s - p.s, w.delta - p.delta
        conds["3s'<s"] = _cond(3 * p.s, w.s)
        conds["3delta'<delta"] = _cond(3 * p.delta, w.delta)
        if freq is not None:
            conds["X|wI/wr|<s'"] = _cond(aI, p.s)
            conds["X|wJ/wr|<delta'/delta"] = _cond(aJ, p.delta / w.delta)
    elif variant == "standard":
        if freq is None:
            raise ValueError("the standard variant needs the frequencies")
        s1, d1 = w.s - aI, w.delta * math.exp(-aJ)
        conds["2s'<s"] = _cond(2 * p.s, w.s)
        conds["2delta'<delta"] = _cond(2 * p.delta, w.delta)
        conds["X|wI/wr|<s-2s'"] = _cond(aI, w.s - 2 * p.s)
        conds["X|wJ/wr|<log(delta/2delta')"] = _cond(aJ, math.log(w.delta / (2 * p.delta)))
    else:
        raise ValueError(f"unknown schedule variant {variant!r}")
    w1 = Widths(w.r, w.rho, w.xi, s1, d1)
    wl = w1 - p
    wo = wl - p
    mk = lambda ww: DomainSpec(dom.R, dom.I_box, dom.x_max, ww, strict=False)
    d = min(p.rho * p.s, p.r * p.xi, p.delta ** 2)
    admissible = p.positive and wo.positive and all(c["ok"] for c in conds.values())
    return StepParams(index, variant, dom, p, d, mk(w1), mk(wl), mk(wo), conds, bool(admissible))


def schedule(N: int, dom: DomainSpec, freq=None, variant: str = "stronger") -> list[StepParams]:
    """Fixed width schedule: one opening step and ``N`` further steps.

    The opening step uses ``r' = r/6, rho' = rho/6, xi' = xi/6, s' = s/9,
    delta' = delta/9`` and lands on ``2/3`` of the widths; each further step
    uses ``r/(6N), ..., s/(9N), delta/(9N)`` of the original widths and removes
    ``1/(3N)`` of each, so the final domain has ``1/3`` of the original widths.
    """
    if int(N) != N or N < 1:
        raise ValueError("N must be a positive integer")
    N = int(N)
    w = dom.widths
    first = Widths(w.r / 6, w.rho / 6, w.xi / 6, w.s / 9, w.delta / 9)
    rest = Widths(w.r / (6 * N), w.rho / (6 * N), w.xi / (6 * N), w.s / (9 * N), w.delta / (9 * N))
    steps = []
    cur = dom
    for i in range(N + 1):
        st = make_step(cur, first if i == 0 else rest, freq, variant, index=i)
        steps.append(st)
        cur = st.dom_out
    return steps


# -- configuration -------------------------------------------------------------

@dataclass(frozen=True)
class NormalizationConfig:
    """Driver settings.  Constants default to the shipped calibration."""

    N: int = 4
    cbar: float | None = None
    ctilde: float | None = None
    c: float | None = None
    trunc: TruncationOrders = field(default_factory=TruncationOrders)
    tol: float = 1e-14
    jmax_cap: int = 40
    prune: float = 1e-17
    residual_tol: float = 1e-10
    variant: str = "stronger"
    enforce_assumptions: bool = True
    enforce_halving: bool = True

    def __post_init__(self):
        consts = load_constants()
        for name in ("cbar", "ctilde", "c"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, float(consts[name]))
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if not (self.cbar > 0 and self.ctilde >= self.cbar and self.c >= 162 * self.ctilde
                and self.c >= 1):
            raise ValueError(
                f"constants must satisfy c >= max(1, 162 ctilde) and ctilde >= cbar > 0, got "
                f"cbar={self.cbar}, ctilde={self.ctilde}, c={self.c}")

    def as_dict(self) -> dict:
        return {"N": self.N, "cbar": self.cbar, "ctilde": self.ctilde, "c": self.c,
                "trunc": self.trunc.as_dict(), "tol": self.tol, "jmax_cap": self.jmax_cap,
                "prune": self.prune, "residual_tol": self.residual_tol, "variant": self.variant}


# -- assumptions ---------------------------------------------------------------

def _check_H0(H0: TFSeries):
    sp = H0.space
    ref = TFSeries.H0(sp, H0.trunc)
    diff = H0 - ref
    # a constant shift of the energy is harmless
    const = (~diff.exps.any(axis=1)) if diff.nterms else np.zeros(0, bool)
    if diff.nterms and not const.all():
        raise AssumptionError("H0 must be the linear Hamiltonian of the phase-space frequencies",
                              name="H0")


@dataclass
class AssumptionReport:
    N: int
    conditions: dict
    schedule_ok: bool
    schedule_failures: list
    max_N: int | None
    max_norm_f: float
    norm_f: float

    @property
    def ok(self) -> bool:
        return all(c["ok"] for c in self.conditions.values()) and self.schedule_ok

    def as_dict(self) -> dict:
        return {"N": self.N, "ok": self.ok, "conditions": self.conditions,
                "schedule_ok": self.schedule_ok, "schedule_failures": self.schedule_failures,
                "max_N": self.max_N, "max_norm_f": self.max_norm_f, "norm_f": self.norm_f}


def _max_N(a: float, b: float) -> int | None:
    """Largest integer ``N >= 0`` with ``N a < b`` (None when unbounded)."""
    if a <= 0:
        return None
    q = b / a
    n = math.floor(q)
    return int(n - 1 if n == q else n)


def check_assumptions(H0: TFSeries, f: TFSeries, dom: DomainSpec,
                      cfg: NormalizationConfig) -> AssumptionReport:
    """Evaluate the three smallness assumptions plus feasibility of the schedule.

    The conditions are ``4N X||w_I/w_r|| < s``, ``4N X||w_J/w_r|| < 1`` and
    ``c N (X/dfrak)|1/w_r| ||f|| < 1``.  They do not imply the per-step
    frequency conditions of the stronger variant, which are therefore
    evaluated on the actual schedule as well.
    """
    _check_H0(H0)
    fr = H0.space.freq
    N, X, w = cfg.N, dom.X, dom.widths
    dfrak = dom.dfrak
    nf = weighted_norm(f, dom)
    inv = abs(fr.inv_omega_r)
    conds = {
        "1: 4N X|wI/wr| < s": _cond(4 * N * X * fr.ratio_I, w.s),
        "2: 4N X|wJ/wr| < 1": _cond(4 * N * X * fr.ratio_J, 1.0),
        "3: c N (X/dfrak)|1/wr| ||f|| < 1": _cond(cfg.c * N * X / dfrak * inv * nf, 1.0),
    }
    nI = _max_N(4 * X * fr.ratio_I, w.s)
    nJ = _max_N(4 * X * fr.ratio_J, 1.0)
    maxN = None if nI is None and nJ is None else min(v for v in (nI, nJ) if v is not None)
    fails = []
    for st in schedule(N, dom, fr, cfg.variant):
        bad = [k for k, c in st.conditions.items() if not c["ok"]]
        if not st.dom_out.widths.positive:
            bad.append("output widths positive")
        if bad:
            fails.append({"step": st.index, "failed": bad})
    return AssumptionReport(N, conds, not fails, fails, maxN,
                            float(dfrak / (cfg.c * N * X * inv)), float(nf))


# -- one step ------------------------------------------------------------------

@dataclass
class StepResult:
    params: StepParams
    g_next: TFSeries
    f_next: TFSeries
    phi: TFSeries
    fbar: TFSeries
    record: dict


def iterative_step(H0: TFSeries, g: TFSeries, f: TFSeries, params: StepParams,
                   cfg: NormalizationConfig) -> StepResult:
    """One normalization step ``H0 + g + f -> H0 + (g + fbar) + f_+``.

    Raises
    ------
    AssumptionError
        Naming the first failed width/frequency condition or the smallness
        condition ``ctilde (X/d)|1/w_r| ||f~|| < 1``.
    """
    sp = f.space
    fr = sp.freq
    D = params.domain
    for name, c in params.conditions.items():
        if not c["ok"]:
            raise AssumptionError(f"step {params.index}: condition {name} fails "
                                  f"({c['lhs']:.6g} vs {c['rhs']:.6g})", name=name)
    if not params.dom_out.widths.positive:
        raise AssumptionError(f"step {params.index}: non-positive output widths "
                              f"{params.dom_out.widths}", name="widths")
    if g.nterms and not normal_mask(g).all():
        raise AssumptionError("g must lie in the normal class", name="g")
    X, d, inv = D.X, params.d, abs(fr.inv_omega_r)
    fbar, ftilde = project_average(f)
    nf = weighted_norm(f, D)
    nft = weighted_norm(ftilde, D)
    small = _cond(cfg.ctilde * X / d * inv * nft, 1.0)
    if not small["ok"]:
        raise AssumptionError(f"step {params.index}: smallness ctilde (X/d)|1/wr| ||f~|| = "
                              f"{small['lhs']:.6g} >= 1", name="smallness")
    sol = solve_homological(ftilde, overflow="keep", ledger=True, domain=D,
                            max_x_degree=cfg.trunc.x, method="stable")
    phi, unsolved = sol.phi, sol.unsolved
    # generator estimates: on the standard shrunk domain without and with 1/d,
    # and on the step's own intermediate domain
    nphi1 = weighted_norm(phi, params.dom1)
    bound_phi = X / d * inv * weighted_norm(ftilde - unsolved, D)
    tr = transform_hamiltonian(H0, g, f, phi, domain=params.dom_lie, primed=params.primed,
                               cbar=cfg.cbar, trunc=cfg.trunc, unsolved=unsolved, tol=cfg.tol,
                               residual_tol=cfg.residual_tol, jmax_cap=cfg.jmax_cap,
                               prune=cfg.prune)
    nfp = tr.norms["fplus"]
    rhs_bound = cfg.ctilde * X / d * inv * nft * nf + tr.norms["phi_g"]
    g_next = g + fbar
    record = {
        "step": params.index,
        "domain": params.as_dict(),
        "norm_f": nf,
        "norm_ftilde": nft,
        "norm_fbar": weighted_norm(fbar, D),
        "norm_g": weighted_norm(g, D),
        "norm_phi": nphi1,
        "norm_f_next": nfp,
        "norm_f_next_certified": tr.norms["fplus_certified"],
        "ratio": nfp / nf if nf > 0 else 0.0,
        "theta": tr.theta,
        "jmax": tr.jmax,
        "tail": tr.tail,
        "dropped_mass": tr.dropped_mass,
        "unsolved_terms": unsolved.nterms,
        "residual": tr.residual,
        "smallness": small,
        "bound_on_phi": _cond(nphi1, bound_phi, strict=False),
        "bound_on_phi_shrunk": _cond(*sol.bound, strict=False) if sol.bound else None,
        "bound": _cond(tr.norms["fplus_certified"], rhs_bound, strict=False),
        "norm_phi_g": tr.norms["phi_g"],
        "nterms_f_next": tr.fplus.nterms,
        "homological_ledger": sol.ledger,
    }
    return StepResult(params, g_next, tr.fplus, phi, fbar, record)


# -- driver --------------------------------------------------------------------

@dataclass
class NormalizationReport:
    config: dict
    domain: dict
    assumptions: dict
    steps: list
    final: dict
    theses: dict
    ledger_ok: bool

    def as_dict(self) -> dict:
        steps = [{k: v for k, v in s.items()} for s in self.steps]
        return {"schema": REPORT_SCHEMA, "kind": "normalize", "config": self.config,
                "domain": self.domain, "assumptions": self.assumptions, "steps": steps,
                "final": self.final, "theses": self.theses, "ledger_ok": self.ledger_ok}

    def to_json(self, **kw) -> str:
        return json.dumps(_jsonable(self.as_dict()), sort_keys=True, indent=2, **kw)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["step", "norm_f", "norm_phi", "ratio", "margin_1", "margin_2", "margin_3"])
        for s in self.steps:
            c = s["domain"]["conditions"]
            mI = next((v["margin"] for k, v in c.items() if k.startswith("X|wI")), float("nan"))
            mJ = next((v["margin"] for k, v in c.items() if k.startswith("X|wJ")), float("nan"))
            wr.writerow([s["step"], _fmt(s["norm_f"]), _fmt(s["norm_phi"]), _fmt(s["ratio"]),
                         _fmt(mI), _fmt(mJ), _fmt(s["smallness"]["margin"])])
        return buf.getvalue()


def _fmt(v) -> str:
    return repr(float(v))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v) or math.isinf(v):
            return str(v)
        return v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass
class NormalizationResult:
    g: TFSeries
    f: TFSeries
    generators: list
    report: NormalizationReport
    domain: DomainSpec
    H0: TFSeries

    def __iter__(self):
        return iter((self.g, self.f, self.generators, self.report))

    def hamiltonian(self) -> TFSeries:
        return self.H0 + self.g + self.f


def ledger_identity(g: TFSeries, fbar: TFSeries, g_next: TFSeries) -> tuple[bool, float]:
    """Check ``g_next - g = fbar`` monomial by monomial.

    Keys must match exactly (those of ``g_next`` are the union of those of
    ``g`` and ``fbar``); coefficients must agree up to the rounding of one
    addition, ``|g_next - g - fbar| <= 4 eps (|g| + |fbar|)``.  Returns
    ``(ok, worst error in units of that allowance)``.
    """
    sp = g.space
    parts = (g, fbar, g_next)
    rows = np.concatenate([s.exps for s in parts]) if any(s.nterms for s in parts) else None
    if rows is None:
        return True, 0.0
    uniq, inv = unique_rows(rows)
    vals = np.zeros((3, uniq.shape[0]), dtype=sp.dtype)
    start = 0
    for tag, s in enumerate(parts):
        vals[tag, inv[start:start + s.nterms]] = s.coef
        start += s.nterms
    a, b, c = vals
    allow = (4 * sp.eps * (np.abs(a) + np.abs(b))).astype(float)
    err = np.abs(c - a - b).astype(float)
    lost = (c == 0) & ((a != 0) | (b != 0)) & (err > allow)
    with np.errstate(divide="ignore", invalid="ignore"):
        units = np.where(allow > 0, err / allow, np.where(err == 0, 0.0, np.inf))
    worst = float(units.max(initial=0.0))
    return bool(not lost.any() and worst <= 1.0), worst


def normalize(H0: TFSeries, f: TFSeries, dom: DomainSpec,
              cfg: NormalizationConfig | None = None) -> NormalizationResult:
    """Normalize ``H0 + f`` by ``cfg.N + 1`` scheduled steps.

    Returns ``NormalizationResult`` which unpacks as
    ``(g_N, f_N, [phi_1, ...], report)``.

    Raises
    ------
    AssumptionError
        The assumptions (or a step precondition) fail; ``report`` is attached.
    HalvingError
        A step did not halve the remainder.
    """
    cfg = cfg or NormalizationConfig()
    sp = f.space
    fr = sp.freq
    f = f.with_trunc(cfg.trunc)
    ass = check_assumptions(H0, f, dom, cfg)
    if cfg.enforce_assumptions and not ass.ok:
        bad = [k for k, c in ass.conditions.items() if not c["ok"]]
        if not ass.schedule_ok:
            bad.append(f"schedule {ass.schedule_failures}")
        raise AssumptionError(f"assumptions fail: {bad}", name=bad[0] if bad else None,
                              report=ass)
    steps = schedule(cfg.N, dom, fr, cfg.variant)
    g = TFSeries.zero(sp, cfg.trunc)
    cur = f
    records, gens = [], []
    ledger_ok = True
    nf0 = ass.norm_f
    fbar0, ftilde0 = project_average(f)
    chain_rhs = 81 * cfg.ctilde * dom.X / dom.dfrak * abs(fr.inv_omega_r) * weighted_norm(ftilde0, dom) * nf0
    nf1 = None
    prev_norm = nf0
    for st in steps:
        res = iterative_step(H0, g, cur, st, cfg)
        # g_j - g_{j-1} = fbar_j key-exactly
        same, ledger_err = ledger_identity(g, res.fbar, res.g_next)
        ledger_ok &= bool(same)
        rec = res.record
        rec["ledger_identity"] = bool(same)
        rec["ledger_error"] = ledger_err
        nfn = rec["norm_f_next"]
        if nf1 is None:
            nf1 = nfn
        rec["halving"] = _cond(nfn, prev_norm / 2, strict=False)
        rec["smallness_chain"] = {"norm_f_j": nfn, "norm_f_1": nf1, "rhs": chain_rhs,
                                  "ok": bool(nfn <= nf1 * (1 + _RTOL) and nf1 <= chain_rhs)}
        records.append(rec)
        gens.append(res.phi)
        if cfg.enforce_halving and not rec["halving"]["ok"]:
            report = _make_report(cfg, dom, ass, records, g, res.f_next, st, fbar0, ftilde0, nf0, ledger_ok)
            raise HalvingError(f"step {st.index}: remainder ratio {nfn / prev_norm:.6g} > 1/2",
                               ratio=nfn / prev_norm, report=report)
        prev_norm = nfn
        g, cur = res.g_next, res.f_next
    report = _make_report(cfg, dom, ass, records, g, cur, steps[-1], fbar0, ftilde0, nf0, ledger_ok)
    return NormalizationResult(g, cur, gens, report, steps[-1].dom_out, H0)


def _make_report(cfg, dom, ass, records, g, fN, last, fbar0, ftilde0, nf0, ledger_ok):
    fr = g.space.freq
    out = last.dom_out
    nfN = weighted_norm(fN, out)
    n_h1 = weighted_norm(g - fbar0, out)
    rhs1 = cfg.c * dom.X / dom.dfrak * abs(fr.inv_omega_r) * weighted_norm(ftilde0, dom) * nf0
    ratio = out.widths.as_tuple()
    third = [a / b for a, b in zip(ratio, dom.widths.as_tuple())]
    final = {"norm_f_N": nfN, "norm_f": nf0, "ratio": nfN / nf0 if nf0 else 0.0,
             "widths": out.widths.as_dict(), "width_fractions": third,
             "widths_ge_third": all(t >= (1 - _RTOL) / 3 for t in third),
             "d_min": min(r["domain"]["d"] for r in records) if records else None,
             "d_floor": dom.dfrak / (81 * cfg.N ** 2),
             "total_tail": sum(r["tail"] for r in records),
             "total_dropped": sum(r["dropped_mass"] for r in records),
             "steps": len(records)}
    final["d_ok"] = bool(final["d_min"] is None or
                         final["d_min"] >= final["d_floor"] * (1 - _RTOL))
    theses = {"remainder": _cond(nfN, nf0 / 2 ** (cfg.N + 1), strict=False),
              "normal_part": _cond(n_h1, rhs1, strict=False)}
    return NormalizationReport(cfg.as_dict(), dom.as_dict(), ass.as_dict(), records, final,
                               theses, bool(ledger_ok))


# -- calibration ---------------------------------------------------------------

@dataclass
class CalibrationResult:
    cbar: float
    ctilde: float
    c: float
    corpus_hash: str
    n_instances: int
    needed: dict
    certificates: dict
    per_instance: list

    def as_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, "kind": "calibrate", "cbar": self.cbar,
                "ctilde": self.ctilde, "c": self.c, "corpus_hash": self.corpus_hash,
                "n_instances": self.n_instances, "needed": self.needed,
                "certificates": self.certificates}

    def constants(self) -> dict:
        return {"cbar": self.cbar, "ctilde": self.ctilde, "c": self.c,
                "corpus_hash": self.corpus_hash, "n_instances": self.n_instances,
                "source": "calibrated"}


def corpus_hash(instances) -> str:
    h = hashlib.sha256()
    for inst in instances:
        h.update(inst.f.dumps().encode())
        h.update(json.dumps(inst.domain.as_dict(), sort_keys=True).encode())
    return h.hexdigest()


def _pow2_ceil(x: float) -> float:
    """Smallest power of two ``>= x``; 1 when nothing was measured."""
    if x <= 0:
        return 1.0
    return float(2.0 ** math.ceil(math.log2(x)))


def _geometric_needs(phi, g, dom_lie, primed, jmax=5, trunc=None):
    """Smallest ``cbar`` making ``||L^j g|| <= j! theta^j ||g||`` hold for ``j <= jmax``."""
    d = norm_params(dom_lie, primed).d
    nphi = weighted_norm(phi, dom_lie)
    ng = weighted_norm(g, dom_lie)
    if nphi == 0 or ng == 0:
        return 0.0, []
    # compute the powers with cbar chosen so that theta < 1 regardless
    exp = lie_powers(phi, g, jmax, domain=dom_lie, primed=primed, cbar=0.5 * d / nphi,
                     trunc=trunc, prune=0.0)
    out = dom_lie.shrink(primed)
    need, rows = 0.0, []
    for j in range(1, jmax + 1):
        lj = weighted_norm(exp.powers[j], out)
        rows.append(lj)
        if lj > 0:
            need = max(need, (lj / (math.factorial(j) * ng)) ** (1.0 / j) * d / nphi)
    return need, rows


def _halving_probe(inst, c, cbar, ctilde, fraction, trunc):
    """Opening step of ``inst`` rescaled to ``fraction`` of the N=1 margin for ``c``."""
    sp, dom = inst.f.space, inst.domain
    fr = sp.freq
    f = inst.f.with_trunc(trunc)
    nf = weighted_norm(f, dom)
    target = fraction * dom.dfrak / (c * dom.X * abs(fr.inv_omega_r))
    f = f * (target / nf)
    cfg = NormalizationConfig(N=1, cbar=cbar, ctilde=ctilde, c=c, trunc=trunc)
    st = schedule(1, dom, fr)[0]
    try:
        res = iterative_step(TFSeries.H0(sp, trunc), TFSeries.zero(sp, trunc), f, st, cfg)
    except (DivergenceError, AssumptionError) as exc:
        return {"ok": False, "error": type(exc).__name__}
    ratio = res.record["ratio"]
    return {"ok": bool(ratio <= 0.5 and res.record["bound"]["ok"]), "ratio": ratio,
            "bound_ok": res.record["bound"]["ok"]}


def calibrate_constant(instances, min_instances: int = 20, jmax: int = 5,
                       trunc: TruncationOrders | None = None, fraction: float = 0.9,
                       progress=None) -> CalibrationResult:
    """Smallest powers of two ``cbar <= ctilde`` and ``c >= 162 ctilde`` the corpus supports.

    Each instance enters through the opening step of the schedule.
    ``cbar`` must make ``||L^j g|| <= j! theta^j ||g||`` hold for ``j <= jmax``
    (with ``g = f~``) and ``ctilde`` the step estimate for ``f_+``, both
    measured at the instance's own size.  ``c`` is then the smallest power of
    two, not below ``max(1, 162 ctilde)``, for which every instance rescaled to
    ``fraction`` of the admissible size still converges, satisfies the step
    estimate and halves.  ``certificates`` records that halving each constant
    produces a violation (for ``c`` only when the ordering is not binding).
    """
    instances = list(instances)
    if len(instances) < min_instances:
        raise ValueError(f"calibration corpus too small: {len(instances)} < {min_instances}")
    trunc = trunc or TruncationOrders()
    need_bar, need_tilde = [], []
    per = []
    active = []
    for idx, inst in enumerate(instances):
        sp = inst.f.space
        fr = sp.freq
        dom = inst.domain
        st = schedule(1, dom, fr)[0]
        f = inst.f.with_trunc(trunc)
        fbar, ftilde = project_average(f)
        if ftilde.is_zero:
            need_bar.append(0.0)
            need_tilde.append(0.0)
            per.append({"index": idx, "trivial": True})
            continue
        active.append(inst)
        phi, unsolved = solve_homological(ftilde, overflow="keep", domain=dom, method="stable")
        nb, lj = _geometric_needs(phi, ftilde, st.dom_lie, st.primed, jmax, trunc)
        need_bar.append(nb)
        X, d, inv = dom.X, st.d, abs(fr.inv_omega_r)
        nf = weighted_norm(f, dom)
        nft = weighted_norm(ftilde, dom)
        tr = transform_hamiltonian(TFSeries.H0(sp, trunc), TFSeries.zero(sp, trunc), f, phi,
                                   domain=st.dom_lie, primed=st.primed,
                                   cbar=0.5 * d / max(weighted_norm(phi, st.dom_lie), 1e-300),
                                   trunc=trunc, unsolved=unsolved)
        nt = tr.norms["fplus_certified"] / (X / d * inv * nft * nf)
        need_tilde.append(nt)
        per.append({"index": idx, "need_cbar": nb, "need_ctilde": nt,
                    "ratio": tr.norms["fplus"] / nf, "lie_norms": lj})
        if progress:
            progress(idx, per[-1])
    cbar = _pow2_ceil(max(need_bar))
    ctilde = max(_pow2_ceil(max(need_tilde)), cbar)
    c_floor = max(1.0, 162 * ctilde)
    c = c_floor
    rounds = []
    for _ in range(40):
        probes = [_halving_probe(inst, c, cbar, ctilde, fraction, trunc) for inst in active]
        fails = sum(not p["ok"] for p in probes)
        rounds.append({"c": c, "failures": fails})
        if progress:
            progress("c", rounds[-1])
        if fails == 0:
            break
        c *= 2
    else:
        raise ArithmeticError("no power of two makes every corpus instance halve")
    certs = {
        "cbar_half_fails": bool(max(need_bar) > cbar / 2),
        "ctilde_half_fails": bool(max(need_tilde) > ctilde / 2) if ctilde > cbar else None,
        "c_binding": "ordering" if c == c_floor else "halving",
        "c_half_fails": bool(len(rounds) > 1) if c > c_floor else None,
        "c_rounds": rounds,
    }
    needed = {"cbar": max(need_bar), "ctilde": max(need_tilde), "c_floor": c_floor}
    return CalibrationResult(cbar, ctilde, c, corpus_hash(instances), len(instances), needed,
                             certs, per)
