"""Numeric dynamics used to cross-check the symbolic machinery.

Hamilton's equations follow the bracket of :mod:`sdfree.series`: a function
``F`` evolves as ``dF/dt = {K, F}`` under the Hamiltonian ``K``, so for each
(momentum, position) pair ``(P, Q)`` in ``(r, x), (I, phi), (q, p)``::

    dQ/dt = dK/dP,    dP/dt = -dK/dQ.

With this convention the Lie series ``exp(L_phi) g`` is ``g`` composed with the
time-1 flow of ``phi``, which is what :func:`flow_generator` realizes.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .series import FrequencyData, PhaseSpace, TFSeries, partial_derivative

__all__ = [
    "IntegrationError",
    "PhasePoint",
    "Trajectory",
    "phase_distance",
    "HamiltonianField",
    "unperturbed_flow",
    "clock_flow",
    "clock_hamiltonian",
    "integrate",
    "flow_generator",
    "compose_flows",
    "compare_trajectories",
    "sign_self_test",
]

TWO_PI = 2.0 * math.pi


class IntegrationError(ArithmeticError):
    """Step-size underflow or a non-finite state during integration."""


@dataclass(frozen=True)
class PhasePoint:
    """Real phase point ``(r, I, x, phi, p, q)``; ``phi`` is stored in ``[0, 2 pi)``."""

    r: float
    I: tuple = ()
    x: float = 0.0
    phi: tuple = ()
    p: tuple = ()
    q: tuple = ()

    def __post_init__(self):
        vec = lambda v: tuple(float(a) for a in np.atleast_1d(np.asarray(v, dtype=float)))
        object.__setattr__(self, "r", float(self.r))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "I", vec(self.I))
        object.__setattr__(self, "p", vec(self.p))
        object.__setattr__(self, "q", vec(self.q))
        phi = np.mod(np.asarray(vec(self.phi), dtype=float), TWO_PI)
        # mod can round up to exactly 2 pi for tiny negative inputs
        phi = np.where(phi >= TWO_PI, 0.0, phi)
        object.__setattr__(self, "phi", tuple(float(v) for v in phi))
        if len(self.I) != len(self.phi) or len(self.p) != len(self.q):
            raise ValueError("I/phi and p/q must have matching lengths")
        if not np.all(np.isfinite(self.to_array())):
            raise ValueError("phase point has non-finite entries")

    @property
    def n(self) -> int:
        return len(self.I)

    @property
    def m(self) -> int:
        return len(self.p)

    def to_array(self) -> np.ndarray:
        """State vector ``[r, I, x, phi, p, q]``."""
        return np.array([self.r, *self.I, self.x, *self.phi, *self.p, *self.q], dtype=float)

    @classmethod
    def from_array(cls, y, n: int, m: int) -> "PhasePoint":
        y = np.asarray(y, dtype=float)
        if y.shape != (2 + 2 * n + 2 * m,):
            raise ValueError(f"state of length {y.shape} does not match n={n}, m={m}")
        return cls(y[0], y[1:1 + n], y[1 + n], y[2 + n:2 + 2 * n],
                   y[2 + 2 * n:2 + 2 * n + m], y[2 + 2 * n + m:])

    def as_dict(self) -> dict:
        return {"r": self.r, "I": list(self.I), "x": self.x, "phi": list(self.phi),
                "p": list(self.p), "q": list(self.q)}

    def as_complex_point(self):
        return (self.r, self.I, self.x, self.phi, self.p, self.q)


def _unwrap_distance(a: np.ndarray, b: np.ndarray, n: int) -> np.ndarray:
    """Component-wise distance, with angles compared on the circle."""
    d = np.abs(a - b)
    ang = slice(2 + n, 2 + 2 * n)
    d[..., ang] = np.minimum(d[..., ang] % TWO_PI, TWO_PI - d[..., ang] % TWO_PI)
    return d


def phase_distance(a: PhasePoint, b: PhasePoint) -> float:
    """Max-norm distance with angles compared modulo ``2 pi``."""
    if (a.n, a.m) != (b.n, b.m):
        raise ValueError("phase points have different dimensions")
    return float(_unwrap_distance(a.to_array(), b.to_array(), a.n).max())


def _coordinate_names(n: int, m: int) -> list[str]:
    return (["r"] + [f"I{i + 1}" for i in range(n)] + ["x"] + [f"phi{i + 1}" for i in range(n)]
            + [f"p{i + 1}" for i in range(m)] + [f"q{i + 1}" for i in range(m)])


@dataclass
class Trajectory:
    """Sampled solution: ``times``, states (rows ``[r, I, x, phi, p, q]``) and energy.

    Angles in ``states`` are not reduced (they are continuous in time);
    :attr:`points` and the CSV export reduce them to ``[0, 2 pi)``.
    """

    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray
    n: int
    m: int
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.energy = np.asarray(self.energy, dtype=float)
        if not (len(self.times) == self.states.shape[0] == len(self.energy)):
            raise ValueError("times, states and energy must have equal lengths")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def points(self) -> list[PhasePoint]:
        return [PhasePoint.from_array(y, self.n, self.m) for y in self.states]

    @property
    def final(self) -> PhasePoint:
        return PhasePoint.from_array(self.states[-1], self.n, self.m)

    def coordinate(self, name: str) -> np.ndarray:
        return self.states[:, _coordinate_names(self.n, self.m).index(name)]

    @property
    def energy_drift(self) -> float:
        """``max |E(t) - E(0)| / max(|E(0)|, tiny)``."""
        if len(self.energy) == 0:
            return 0.0
        e0 = self.energy[0]
        return float(np.max(np.abs(self.energy - e0)) / max(abs(e0), 1e-300))

    def resample(self, times) -> "Trajectory":
        """Linear interpolation onto ``times`` (inside the sampled range)."""
        times = np.asarray(times, dtype=float)
        if times[0] < self.times[0] or times[-1] > self.times[-1]:
            raise ValueError("resampling outside the trajectory's time range")
        ang = slice(2 + self.n, 2 + 2 * self.n)
        st = self.states.copy()
        st[:, ang] = np.unwrap(st[:, ang], axis=0)
        cols = [np.interp(times, self.times, st[:, c]) for c in range(st.shape[1])]
        out = np.column_stack(cols)
        out[:, ang] = np.mod(out[:, ang], TWO_PI)
        return Trajectory(times, out, np.interp(times, self.times, self.energy), self.n, self.m,
                          dict(self.info, resampled=True))

    def to_csv(self, path=None) -> str:
        """CSV with columns ``t, r, I.., x, phi.., p.., q.., energy``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + _coordinate_names(self.n, self.m) + ["energy"])
        ang = slice(2 + self.n, 2 + 2 * self.n)
        for t, y, e in zip(self.times, self.states, self.energy):
            y = y.copy()
            y[ang] = np.mod(y[ang], TWO_PI)
            w.writerow([repr(float(t))] + [repr(float(v)) for v in y] + [repr(float(e))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


# -- closed forms -----------------------------------------------------------------

def unperturbed_flow(freq: FrequencyData, P0: PhasePoint, t: float) -> PhasePoint:
    """Exact flow of ``H0 = omega_r r + omega_I.I + omega_J.pq``.

    ``x += omega_r t``, ``phi += omega_I t``; with the bracket of this package
    ``p`` grows like ``e^{omega_J t}`` and ``q`` decays like ``e^{-omega_J t}``.
    """
    wI = np.asarray(freq.omega_I, dtype=float)
    wJ = np.asarray(freq.omega_J, dtype=float)
    return PhasePoint(P0.r, P0.I, P0.x + freq.omega_r * t,
                      np.asarray(P0.phi) + wI * t,
                      np.asarray(P0.p) * np.exp(wJ * t),
                      np.asarray(P0.q) * np.exp(-wJ * t))


def _sinc_t(eps, t, hyperbolic):
    """``sin(eps t)/eps`` (or ``sinh``), continuous at ``eps = 0``."""
    u = eps * t
    if abs(u) < 1e-4:
        s = 1.0 + (u * u / 6.0 if hyperbolic else -u * u / 6.0) + u ** 4 / 120.0
        return t * s
    return (math.sinh(u) if hyperbolic else math.sin(u)) / eps


def clock_flow(eps: float, variant: str, P0, t):
    """Closed-form motion of ``r^2/2 + eps^2 x^2/2`` or ``r^2/2 - eps^2 x^2/2``.

    ``P0 = (r_star, x_star)`` at ``t = 0``; ``t`` may be an array.  The
    elliptic case is ``r = r* cos(eps t) - eps x* sin(eps t)``,
    ``x = x* cos(eps t) + (r*/eps) sin(eps t)``; the hyperbolic one replaces
    the trigonometric functions by ``cosh, sinh`` and flips the sign in ``r``.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    if variant not in ("elliptic", "hyperbolic"):
        raise ValueError(f"unknown clock variant {variant!r}")
    hyp = variant == "hyperbolic"
    r0, x0 = (float(v) for v in P0)
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    c = np.cosh(eps * ts) if hyp else np.cos(eps * ts)
    sn = np.array([_sinc_t(eps, tt, hyp) for tt in ts])     # sin(eps t)/eps
    r = r0 * c + (1 if hyp else -1) * eps * eps * x0 * sn
    x = x0 * c + r0 * sn
    if np.ndim(t) == 0:
        return float(r[0]), float(x[0])
    return r, x


def clock_hamiltonian(eps: float, variant: str = "elliptic", space: PhaseSpace | None = None) -> TFSeries:
    """``r^2/2 +- eps^2 x^2/2`` as a series (no angles or rectangular pairs by default)."""
    if space is None:
        space = PhaseSpace(FrequencyData(1.0))
    sign = 1.0 if variant == "elliptic" else -1.0
    if variant not in ("elliptic", "hyperbolic"):
        raise ValueError(f"unknown clock variant {variant!r}")
    z = (0,) * space.n
    zm = (0,) * space.m
    return TFSeries.from_terms(space, [dict(c=0.5, k=z, h=zm, j=zm, a=2),
                                        dict(c=sign * 0.5 * eps * eps, k=z, h=zm, j=zm, e=2)])


# -- vector fields ----------------------------------------------------------------

class HamiltonianField:
    """Vectorized evaluator of ``K`` and of Hamilton's equations for ``K``.

    The derivative series are stacked once so every call costs one pass over
    the rows.  Values are complex sums; the vector field is their real part
    (``K`` is assumed real on real points; the largest imaginary part seen is
    kept in ``max_imag``).
    """

    def __init__(self, K: TFSeries):
        sp = K.space
        self.space = sp
        self.n, self.m = sp.n, sp.m
        n, m = sp.n, sp.m
        # state order [r, I, x, phi, p, q]; Hamilton: dQ = dK/dP, dP = -dK/dQ
        plan = [("x", -1.0)]                       # r' = -K_x
        plan += [(f"phi{i + 1}", -1.0) for i in range(n)]   # I' = -K_phi
        plan += [("r", 1.0)]                       # x' = K_r
        plan += [(f"I{i + 1}", 1.0) for i in range(n)]      # phi' = K_I
        plan += [(f"q{i + 1}", 1.0) for i in range(m)]      # p' = K_q
        plan += [(f"p{i + 1}", -1.0) for i in range(m)]     # q' = -K_p
        parts = [K] + [partial_derivative(K, c) for c, _ in plan]
        self.signs = np.array([s for _, s in plan])
        seg = np.concatenate([np.full(s.nterms, i) for i, s in enumerate(parts)]).astype(np.int64)
        E = np.vstack([s.exps for s in parts]) if seg.size else np.zeros((0, sp.width), np.int64)
        self.nseg = len(parts)
        self.seg = seg
        self.coef = np.concatenate([s.coef for s in parts]).astype(complex)
        self.k = E[:, sp.K].astype(float)
        self.h = E[:, sp.H]
        self.j = E[:, sp.J]
        self.a = E[:, sp.A]
        self.b = E[:, sp.B]
        self.e = E[:, sp.E]
        self.alpha = sp.alpha(E[:, sp.W]).astype(complex)
        self.I0 = np.array(sp.I0, dtype=float)
        self.r0 = sp.r0
        self.max_imag = 0.0
        self.nfev = 0

    def _values(self, y) -> np.ndarray:
        n, m = self.n, self.m
        r = y[0]
        I = y[1:1 + n]
        x = y[1 + n]
        phi = y[2 + n:2 + 2 * n]
        p = y[2 + 2 * n:2 + 2 * n + m]
        q = y[2 + 2 * n + m:]
        arg = self.alpha * x
        if n:
            arg = arg + 1j * (self.k @ phi)
        v = self.coef * np.exp(arg) * (r - self.r0) ** self.a * x ** self.e
        if n:
            v = v * np.prod((I - self.I0) ** self.b, axis=1)
        if m:
            v = v * np.prod(p ** self.h, axis=1) * np.prod(q ** self.j, axis=1)
        re = np.bincount(self.seg, weights=v.real, minlength=self.nseg)
        im = np.bincount(self.seg, weights=v.imag, minlength=self.nseg)
        self.max_imag = max(self.max_imag, float(np.abs(im).max(initial=0.0)))
        return re

    def __call__(self, t, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        self.nfev += 1
        vals = self._values(y)
        return self.signs * vals[1:]

    def energy(self, y) -> float:
        return float(self._values(np.asarray(y, dtype=float))[0])


# -- integrators ------------------------------------------------------------------

_GBS_SEQ = (2, 4, 6, 8)


def _gbs_step(fun, t, y, h, f0):
    """One Gragg-Bulirsch-Stoer step of order 8 and its embedded error estimate."""
    T = []
    for n in _GBS_SEQ:
        hs = h / n
        z0 = y
        z1 = y + hs * f0
        for i in range(1, n):
            z0, z1 = z1, z0 + 2.0 * hs * fun(t + i * hs, z1)
        T.append(z1)
    # Aitken-Neville extrapolation in h^2
    tab = [list(T)]
    for k in range(1, len(_GBS_SEQ)):
        row = []
        for jj in range(k, len(_GBS_SEQ)):
            ratio = (_GBS_SEQ[jj] / _GBS_SEQ[jj - k]) ** 2
            prev = tab[k - 1]
            row.append(prev[jj - k + 1] + (prev[jj - k + 1] - prev[jj - k]) / (ratio - 1.0))
        tab.append(row)
    best = tab[-1][0]
    err = float(np.max(np.abs(best - tab[-2][-1])))
    return best, err


def _gbs8(fun, t_end, y0, dt, t_out):
    nsteps = max(1, int(math.ceil(t_end / dt - 1e-12)))
    h = t_end / nsteps
    ys = [y0]
    ts = [0.0]
    y = y0
    errmax = 0.0
    for i in range(nsteps):
        t = i * h
        y, err = _gbs_step(fun, t, y, h, fun(t, y))
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state at t={t + h:.6g}")
        errmax = max(errmax, err)
        ts.append((i + 1) * h)
        ys.append(y)
    ts = np.array(ts)
    ys = np.array(ys)
    if t_out is not None:
        # samples are taken on the step grid; t_out must be a subset of it
        idx = np.searchsorted(ts, t_out - 1e-9 * h)
        if np.any(np.abs(ts[np.minimum(idx, len(ts) - 1)] - t_out) > 1e-9 * max(h, 1.0)):
            raise ValueError("GBS8 output times must lie on the step grid")
        ts, ys = ts[idx], ys[idx]
    return ts, ys, {"steps": nsteps, "step": h, "max_local_error_estimate": errmax}


def integrate(H: TFSeries, P0: PhasePoint, t_end: float, dt: float | None = None,
              tol: float = 1e-12, method: str = "DOP853", t_eval=None) -> Trajectory:
    """Integrate Hamilton's equations of the series ``H`` from ``t = 0``.

    Parameters
    ----------
    dt : float, optional
        Output spacing for ``DOP853`` (adaptive, local error controlled by
        ``tol``), the fixed step for ``GBS8``.  Without ``dt`` and ``t_eval``
        only the end points are returned.
    tol : float
        Relative and absolute local error target of the adaptive scheme.
    method : {'DOP853', 'GBS8'}
        ``GBS8`` is the in-house fixed-step extrapolation scheme of order 8,
        used for convergence-order checks.

    Raises
    ------
    IntegrationError
        On step-size underflow or a non-finite state.
    """
    if dt is not None and dt <= 0:
        raise ValueError("dt must be positive")
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    sp = H.space
    if P0.n != sp.n or P0.m != sp.m:
        raise ValueError("phase point dimensions do not match the Hamiltonian")
    K = HamiltonianField(H)
    y0 = P0.to_array()
    if t_eval is None and dt is not None:
        t_eval = np.arange(0.0, t_end, dt)
        t_eval = np.append(t_eval, t_end) if t_end - t_eval[-1] > 1e-12 * t_end else t_eval
        t_eval[-1] = t_end
    if method == "GBS8":
        if dt is None:
            raise ValueError("GBS8 needs a step dt")
        ts, ys, info = _gbs8(K, t_end, y0, dt, None)
    elif method == "DOP853":
        with np.errstate(over="raise", invalid="raise"):
            try:
                sol = solve_ivp(K, (0.0, t_end), y0, method="DOP853", rtol=tol, atol=tol,
                                t_eval=t_eval)
            except FloatingPointError as exc:
                raise IntegrationError(f"non-finite state: {exc}") from exc
        if sol.status != 0:
            raise IntegrationError(f"integration failed: {sol.message}")
        ts, ys = sol.t, sol.y.T
        if t_eval is None:
            ts, ys = ts[[0, -1]], ys[[0, -1]]
        info = {"nfev": int(sol.nfev), "tol": tol}
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(ys)):
        raise IntegrationError("non-finite state")
    energy = np.array([K.energy(y) for y in ys])
    info.update(method=method, max_imag=K.max_imag)
    return Trajectory(ts, ys, energy, sp.n, sp.m, info)


def flow_generator(phi: TFSeries, P0: PhasePoint, t: float = 1.0, tol: float = 1e-12) -> PhasePoint:
    """Time-``t`` map of the Hamiltonian flow of ``phi`` (the Lie transform oracle)."""
    if phi.is_zero or t == 0:
        return P0
    K = HamiltonianField(phi)
    with np.errstate(over="raise", invalid="raise"):
        try:
            sol = solve_ivp(K, (0.0, t), P0.to_array(), method="DOP853", rtol=tol, atol=tol)
        except FloatingPointError as exc:
            raise IntegrationError(f"non-finite state: {exc}") from exc
    if sol.status != 0:
        raise IntegrationError(f"generator flow failed: {sol.message}")
    return PhasePoint.from_array(sol.y[:, -1], P0.n, P0.m)


def compose_flows(generators, P: PhasePoint, tol: float = 1e-12) -> PhasePoint:
    """``Phi_1 o Phi_2 o ... o Phi_N (P)``: the last generator acts first.

    Each normalization step replaces ``H`` by ``H o Phi_i``, so the
    normalized Hamiltonian satisfies ``H_N(P) = H(compose_flows(gens, P))``.
    """
    for phi in reversed(list(generators)):
        P = flow_generator(phi, P, tol=tol)
    return P


def compare_trajectories(a: Trajectory, b: Trajectory, threshold: float | None = None,
                         coordinate: str | None = None, windows=None) -> dict:
    """Distances between two trajectories on ``a``'s time grid.

    ``b`` is interpolated onto ``a.times`` when the grids differ.  Returns the
    sup distance per coordinate, the overall sup, the sup over each window
    ``(t0, t1)``, and the first time the distance (of ``coordinate``, or the
    max over coordinates) reaches ``threshold``.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty trajectory")
    if (a.n, a.m) != (b.n, b.m):
        raise ValueError("trajectories have different dimensions")
    if len(a) != len(b) or not np.allclose(a.times, b.times, rtol=0, atol=1e-12):
        b = b.resample(a.times)
    d = _unwrap_distance(a.states, b.states, a.n)
    names = _coordinate_names(a.n, a.m)
    per = {nm: float(d[:, i].max()) for i, nm in enumerate(names)}
    series = d[:, names.index(coordinate)] if coordinate else d.max(axis=1)
    out = {"sup": float(d.max()), "per_coordinate": per, "coordinate": coordinate,
           "threshold": threshold, "first_exceedance": None}
    if threshold is not None:
        hit = np.flatnonzero(series >= threshold)
        if hit.size:
            i = int(hit[0])
            if i == 0:
                t_hit = float(a.times[0])
            else:
                # linear interpolation between the bracketing samples
                t0, t1 = a.times[i - 1], a.times[i]
                s0, s1 = series[i - 1], series[i]
                t_hit = float(t0 + (threshold - s0) * (t1 - t0) / (s1 - s0))
            out["first_exceedance"] = t_hit
    if windows is not None:
        out["windows"] = []
        for t0, t1 in windows:
            sel = (a.times >= t0) & (a.times <= t1)
            out["windows"].append({"t0": float(t0), "t1": float(t1),
                                   "sup": float(series[sel].max()) if sel.any() else None})
    return out


def sign_self_test(freq: FrequencyData | None = None, t: float = 3.0, tol: float = 1e-10) -> float:
    """Integrate ``H0`` and compare with :func:`unperturbed_flow`; returns the error.

    Raises ``AssertionError`` if the two disagree, i.e. if the Hamilton
    equations and the closed form use different sign conventions.
    """
    if freq is None:
        freq = FrequencyData(1.0, (0.3,), (0.2,))
    sp = PhaseSpace(freq)
    P0 = PhasePoint(0.1, (0.2,) * sp.n, 0.05, (1.0,) * sp.n, (0.4,) * sp.m, (0.3,) * sp.m)
    traj = integrate(TFSeries.H0(sp), P0, t, tol=1e-13)
    ref = unperturbed_flow(freq, P0, t)
    err = float(_unwrap_distance(traj.states[-1], ref.to_array(), sp.n).max())
    if err > tol:
        raise AssertionError(f"H0 flow disagrees with the closed form (error {err:.3g})")
    return err
