"""Oracle checks (conjugacy, clock, solver) and the normal-form artifact file."""
from __future__ import annotations

import json
import math

import numpy as np

from .dynamics import (PhasePoint, Trajectory, clock_flow, clock_hamiltonian, compare_trajectories,
                       compose_flows, integrate)
from .homological import (SmallDivisorError, apply_D_omega, eigenvalue, solve_homological,
                          solve_homological_fourier)
from .instances import random_frequencies, random_zero_average
from .norms import DomainSpec, Widths
from .series import (FrequencyData, PhaseSpace, TFSeries, TruncationOrders, evaluate,
                     max_relative_difference)

__all__ = ["conjugacy_check", "clock_check", "solver_check", "sample_points",
           "dump_normal_form", "load_normal_form", "NormalFormArtifact"]

ARTIFACT_SCHEMA = 1


def sample_points(rng: np.random.Generator, dom: DomainSpec, n: int, m: int, count: int):
    """Uniform real points of the domain's real box; ``|p|, |q| <= delta / 2``."""
    pts = []
    half = dom.widths.delta / 2
    for _ in range(count):
        pts.append(PhasePoint(rng.uniform(*dom.R),
                              tuple(rng.uniform(lo, hi) for lo, hi in dom.I_box),
                              rng.uniform(-dom.x_max, dom.x_max),
                              tuple(rng.uniform(0, 2 * math.pi, size=n)),
                              tuple(rng.uniform(-half, half, size=m)),
                              tuple(rng.uniform(-half, half, size=m))))
    return pts


def conjugacy_check(H: TFSeries, HN: TFSeries, generators, dom: DomainSpec, scale: float,
                    rng: np.random.Generator, points: int = 20, tol_factor: float = 10.0,
                    flow_tol: float = 1e-12) -> dict:
    """``|H(Phi(P)) - H_N(P)| <= tol_factor * scale`` at random points of ``dom``.

    ``Phi`` composes the numeric time-1 flows of ``generators`` (last first);
    ``scale`` is ``||f_N||`` plus the truncation tails of the run.

    The oracle cannot resolve differences below its own error, ``oracle_floor``
    (evaluation rounding ``64 eps |H|`` plus ``flow_tol (1 + |H|)`` per
    generator flow).  ``ok`` compares against ``bound + oracle_floor``;
    ``ok_strict`` against ``bound`` alone.
    """
    sp = H.space
    eps = float(np.finfo(float).eps)
    worst = 0.0
    floor = 0.0
    for P in sample_points(rng, dom, sp.n, sp.m, points):
        Q = compose_flows(generators, P, tol=flow_tol)
        hq = evaluate(H, Q.as_complex_point())
        d = abs(hq - evaluate(HN, P.as_complex_point()))
        worst = max(worst, d)
        floor = max(floor, 64 * eps * abs(hq) + len(generators) * flow_tol * (1 + abs(hq)))
    bound = tol_factor * scale
    return {"id": "conjugacy", "points": points, "max_abs_diff": worst, "bound": bound,
            "scale": scale, "oracle_floor": floor, "ok_strict": bool(worst <= bound),
            "ok": bool(worst <= bound + floor)}


def clock_check(eps: float = 0.01, r_star: float = 0.0, x_star: float = 1.0,
                horizon: float = 10.0, sample: float = 1.0, tol: float = 1e-8,
                threshold: float = 0.5, window=(0.5, 5.0), energy_tol: float = 1e-9) -> dict:
    """Integrated clock motions against the closed forms, and divergence from free flow.

    ``horizon`` and ``window`` are in units of ``1/eps``.  Returns metrics and
    the three trajectories (integrated elliptic, closed-form elliptic, free).
    """
    t_end = horizon / eps
    P0 = PhasePoint(r_star, (), x_star, (), (), ())
    out = {"id": "clock", "eps": eps, "P0": [r_star, x_star], "t_end": t_end}
    trajs = {}
    for variant in ("elliptic", "hyperbolic"):
        H = clock_hamiltonian(eps, variant)
        tr = integrate(H, P0, t_end, dt=sample, tol=1e-13)
        r, x = clock_flow(eps, variant, (r_star, x_star), tr.times)
        err = max(float(np.abs(tr.coordinate("r") - r).max()),
                  float(np.abs(tr.coordinate("x") - x).max()))
        free_r, free_x = clock_flow(0.0, variant, (r_star, x_star), tr.times)
        free = Trajectory(tr.times, np.column_stack([free_r, free_x]),
                          0.5 * free_r ** 2, 0, 0)
        cmp = compare_trajectories(tr, free, threshold=threshold, coordinate="x",
                                   windows=[(0.0, window[0] / eps), (0.0, window[1] / eps)])
        out[variant] = {"sup_error": err, "energy_drift": tr.energy_drift,
                        "divergence_time": cmp["first_exceedance"], "windows": cmp["windows"]}
        trajs[variant] = tr
        trajs[f"{variant}_free"] = free
    ell = out["elliptic"]
    td = ell["divergence_time"]
    lo, hi = window[0] / eps, window[1] / eps
    out["divergence_window"] = [lo, hi]
    out["checks"] = {
        "elliptic_sup_error": bool(ell["sup_error"] <= tol),
        "hyperbolic_sup_error": bool(out["hyperbolic"]["sup_error"]
                                     <= tol * max(1.0, math.cosh(horizon))),
        "energy_drift": bool(ell["energy_drift"] <= energy_tol),
        "divergence_time": bool(td is not None and lo <= td <= hi),
    }
    out["ok"] = all(out["checks"].values())
    return out, trajs


def solver_check(rng: np.random.Generator, count: int = 100, tol: float = 1e-10) -> dict:
    """Residual of the integral solver, Fourier contrast and the small-divisor control."""
    worst = 0.0
    n_res = 0
    raised = 0
    for i in range(count):
        res = (None, "J", "I", None)[i % 4]
        sp = PhaseSpace(random_frequencies(rng, 1, 1, res))
        ft = random_zero_average(rng, sp, 6, resonant_keys=res is not None)
        try:
            phi = solve_homological(ft)
        except ArithmeticError:
            raised += 1
            continue
        worst = max(worst, max_relative_difference(apply_D_omega(phi), ft))
        n_res += any(eigenvalue(k, sp).resonant for k in ft.keys())
    # Fourier contrast on x-periodic data
    sp = PhaseSpace(random_frequencies(rng, 1, 1))
    ft = random_zero_average(rng, sp, 6, x_periodic=True)
    diff = apply_D_omega(solve_homological(ft) - solve_homological_fourier(ft))
    contrast = float(np.abs(diff.coef).max(initial=0.0) / np.abs(ft.coef).max())
    # constructed zero denominator: omega_I = -omega_r, key k = 1 with e^{ix}
    sp0 = PhaseSpace(FrequencyData(1.0, (-1.0,), (0.3,)))
    f0 = TFSeries.from_terms(sp0, [dict(c=1.0, k=(1,), w=(0, 0, 1))])
    try:
        solve_homological_fourier(f0)
        fourier_raises = False
    except SmallDivisorError:
        fourier_raises = True
    # the lattice is degenerate here (i omega_I / omega_r = -i), so two rows can
    # represent one function; compare values instead of stored exponents
    resid = apply_D_omega(solve_homological(f0))
    pts = [PhasePoint(u[0], (u[1],), u[2], (2 * math.pi * u[3],), (u[4],), (u[5],))
           for u in rng.uniform(-0.5, 0.5, size=(8, 6))]
    ctl = max(abs(evaluate(resid, P.as_complex_point()) - evaluate(f0, P.as_complex_point()))
              / max(1.0, abs(evaluate(f0, P.as_complex_point()))) for P in pts)
    integral_ok = ctl <= tol
    out = {"id": "solver", "count": count, "max_residual": worst, "resonant_instances": n_res,
           "raised": raised, "fourier_contrast": contrast,
           "small_divisor_control": {"fourier_raises": fourier_raises, "integral_ok": bool(integral_ok)}}
    out["ok"] = bool(worst <= tol and raised == 0 and contrast <= tol and fourier_raises
                     and integral_ok)
    return out


# -- normal form artifact ---------------------------------------------------------------

class NormalFormArtifact:
    """What :func:`load_normal_form` returns."""

    def __init__(self, space, H, g, f, generators, domain, scale):
        self.space = space
        self.H = H
        self.g = g
        self.f = f
        self.generators = generators
        self.domain = domain
        self.scale = scale

    @property
    def HN(self) -> TFSeries:
        return TFSeries.H0(self.space, self.g.trunc) + self.g + self.f


def _space_dict(sp: PhaseSpace) -> dict:
    fr = sp.freq
    return {"omega_r": fr.omega_r, "omega_I": list(fr.omega_I), "omega_J": list(fr.omega_J),
            "r0": sp.r0, "I0": list(sp.I0), "dtype": str(sp.dtype)}


def dump_normal_form(path, H: TFSeries, result) -> str:
    """Write original Hamiltonian, ``g_N``, ``f_N``, generators and scales as JSON."""
    sp = H.space
    fin = result.report.final
    doc = {"schema": ARTIFACT_SCHEMA, "kind": "normal_form", "space": _space_dict(sp),
           "trunc": result.g.trunc.as_dict(),
           "domain": {"R": list(result.domain.R), "I_box": [list(v) for v in result.domain.I_box],
                      "x_max": result.domain.x_max, "widths": result.domain.widths.as_dict()},
           "scale": fin["norm_f_N"] + fin["total_tail"] + fin["total_dropped"],
           "H": H.to_records(), "g_N": result.g.to_records(), "f_N": result.f.to_records(),
           "generators": [p.to_records() for p in result.generators]}
    text = json.dumps(doc, sort_keys=True, indent=1) + "\n"
    with open(path, "w") as fh:
        fh.write(text)
    return text


def load_normal_form(path) -> NormalFormArtifact:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != ARTIFACT_SCHEMA or doc.get("kind") != "normal_form":
        raise ValueError(f"{path}: not a normal-form artifact of schema {ARTIFACT_SCHEMA}")
    s = doc["space"]
    dtype = np.clongdouble if "longdouble" in s["dtype"] or "256" in s["dtype"] else np.complex128
    sp = PhaseSpace(FrequencyData(s["omega_r"], tuple(s["omega_I"]), tuple(s["omega_J"])),
                    (s["r0"], tuple(s["I0"])), dtype=dtype)
    tr = TruncationOrders(**doc["trunc"])
    load = lambda recs: TFSeries.from_records(sp, recs, tr)
    d = doc["domain"]
    dom = DomainSpec(tuple(d["R"]), tuple(tuple(v) for v in d["I_box"]), d["x_max"],
                     Widths(**d["widths"]))
    return NormalFormArtifact(sp, load(doc["H"]), load(doc["g_N"]), load(doc["f_N"]),
                              [load(g) for g in doc["generators"]], dom, float(doc["scale"]))
