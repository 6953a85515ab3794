"""Graph transforms, unstable manifolds, axis switching and leaf stacks.

Graphs are sampled on a uniform grid of ``u`` values and interpolated with
monotone cubic (PCHIP) splines.  Chart coordinates are ``z = (u, v)`` with
the max norm ``|z| = max(|u|, |v|)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import PchipInterpolator

from .cocycle import backward_orbit
from .errors import (ChartOverflow, ConeViolation, HypothesisFailure, NewtonDivergence,
                     NumericalFailure, ReGraphFailure, StepFailure)
from .noise import NoisePath
from .systems import MapFamily, torus_delta, torus_distance
from .tangent import (ChartFrame, ChartParams, ConnectingMap, euclidean_frame, orbit_frames,
                      projection_norm)

N_NODES = 129
MIN_CELLS = 3


# ---------------------------------------------------------------- graphs

@dataclass(frozen=True, eq=False)
class UGraph:
    """Graph of ``g: [-radius, radius] -> R`` in the chart ``frame``.

    ``slope0`` is the derivative at the origin when it is tracked exactly
    through the transforms (``nan`` otherwise).
    """

    frame: ChartFrame
    radius: float
    u: np.ndarray
    g: np.ndarray
    lip: float = float("nan")
    dlip: float = float("nan")
    cs_radius: float = float("inf")
    slope0: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.u) < 2 * MIN_CELLS + 1:
            raise ValueError("graph needs at least 7 nodes")
        if math.isnan(self.lip):
            object.__setattr__(self, "lip", lipschitz(self.u, self.g))
        if math.isnan(self.dlip):
            object.__setattr__(self, "dlip", derivative_lipschitz(self.u, self.g))

    @classmethod
    def from_function(cls, frame, radius, func, n_nodes=N_NODES, **kw):
        u = np.linspace(-radius, radius, n_nodes)
        return cls(frame, float(radius), u, np.asarray(func(u), dtype=float), **kw)

    @classmethod
    def line(cls, frame, radius, slope=0.0, offset=0.0, n_nodes=N_NODES, **kw):
        kw.setdefault("slope0", float(slope) if offset == 0 else float("nan"))
        return cls.from_function(frame, radius, lambda u: offset + slope * u, n_nodes, **kw)

    @property
    def spline(self):
        sp = self.__dict__.get("_spline")
        if sp is None:
            sp = PchipInterpolator(self.u, self.g, extrapolate=True)
            object.__setattr__(self, "_spline", sp)
        return sp

    def __call__(self, u):
        return self.spline(u)

    def derivative(self, u):
        return self.spline(u, 1)

    @property
    def n_nodes(self):
        return len(self.u)

    @property
    def h(self):
        return float(self.u[1] - self.u[0])

    def chart_points(self):
        return np.column_stack([self.u, self.g])

    def torus_points(self, reduce=True):
        return self.frame.from_chart(self.chart_points(), reduce=reduce)

    def value_at_origin(self):
        return float(self(0.0))

    def slope_at_origin(self):
        """Tracked slope at 0 if available, else a centred node difference."""
        if not math.isnan(self.slope0):
            return self.slope0
        c = len(self.u) // 2
        return float((self.g[c + 1] - self.g[c - 1]) / (self.u[c + 1] - self.u[c - 1]))

    def restrict(self, radius, n_nodes=None):
        radius = float(radius)
        if radius > self.radius * (1 + 1e-12):
            raise ValueError("cannot restrict to a larger radius")
        n = n_nodes or len(self.u)
        u = np.linspace(-radius, radius, n)
        return UGraph(self.frame, radius, u, self(u), cs_radius=self.cs_radius,
                      slope0=self.slope0, meta=dict(self.meta))

    def to_dict(self) -> dict:
        return {"frame": self.frame.to_dict(), "radius": self.radius, "lip": self.lip,
                "dlip": self.dlip, "slope0": self.slope0, "n_nodes": len(self.u),
                "meta": {k: v for k, v in self.meta.items() if _jsonable(v)}}


def _jsonable(v):
    return isinstance(v, (int, float, str, bool, type(None), list, tuple, dict))


def lipschitz(u, g):
    return float(np.max(np.abs(np.diff(g) / np.diff(u))))


def derivative_lipschitz(u, g):
    s = np.diff(g) / np.diff(u)
    mid = 0.5 * (u[1:] + u[:-1])
    if len(s) < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(s) / np.diff(mid))))


def prime_norm(h_u, h_vals):
    """``|h|' = sup_{u != 0} |h(u)| / |u|`` over the sample nodes."""
    h_u = np.asarray(h_u)
    m = h_u != 0
    return float(np.max(np.abs(np.asarray(h_vals)[m]) / np.abs(h_u[m])))


def graph_difference_prime(g1: UGraph, g2: UGraph):
    """``|g1 - g2|'`` over the common domain, evaluated on g1's nodes."""
    r = min(g1.radius, g2.radius)
    u = g1.u[np.abs(g1.u) <= r * (1 + 1e-12)]
    return prime_norm(u, g1(u) - g2(u))


def sup_distance(g1: UGraph, g2: UGraph, n=513):
    r = min(g1.radius, g2.radius)
    u = np.linspace(-r, r, n)
    return float(np.max(np.abs(g1(u) - g2(u))))


# ---------------------------------------------------------------- root finding

def _solve_monotone(fun, dfun, targets, u_nodes, vals, tol, max_iter=100):
    """Solve ``fun(u) = target`` for each target by safeguarded Newton.

    ``vals`` are ``fun`` at ``u_nodes`` and must be strictly monotone; the
    bracket for each target comes from them.
    """
    sgn = 1.0 if vals[-1] > vals[0] else -1.0
    sv = sgn * vals
    st = sgn * np.asarray(targets, dtype=float)
    if np.any(np.diff(sv) <= 0):
        raise NewtonDivergence("image of the u-axis is not monotone")
    if st.min() < sv[0] - tol or st.max() > sv[-1] + tol:
        raise NewtonDivergence(
            f"target range [{targets.min():.3e}, {targets.max():.3e}] not covered by "
            f"image [{min(vals[0], vals[-1]):.3e}, {max(vals[0], vals[-1]):.3e}]")
    k = np.clip(np.searchsorted(sv, st), 1, len(sv) - 1)
    lo, hi = u_nodes[k - 1].copy(), u_nodes[k].copy()
    flo, fhi = sv[k - 1] - st, sv[k] - st
    w = np.where(fhi > flo, -flo / np.where(fhi > flo, fhi - flo, 1.0), 0.5)
    u = lo + np.clip(w, 0.0, 1.0) * (hi - lo)
    done = np.zeros(len(st), dtype=bool)
    for _ in range(max_iter):
        r = sgn * fun(u) - st
        done = np.abs(r) <= tol
        if done.all():
            return u
        pos = r > 0
        hi = np.where(pos, u, hi)
        lo = np.where(pos, lo, u)
        d = sgn * dfun(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            un = u - r / d
        bad = ~np.isfinite(un) | (un <= lo) | (un >= hi)
        un = np.where(bad, 0.5 * (lo + hi), un)
        u = np.where(done, u, un)
        if np.all(hi - lo <= 4 * np.finfo(float).eps * np.maximum(np.abs(u), tol)):
            return u
    r = np.abs(sgn * fun(u) - st)
    if np.all((r <= 100 * tol) | (hi - lo <= 1e-15 * np.maximum(1.0, np.abs(u)))):
        return u
    raise NewtonDivergence(f"Newton did not converge (residual {r.max():.3e})")


# ---------------------------------------------------------------- one step

def graph_transform_step(src_frame: ChartFrame, dst_frame: ChartFrame, connecting_map, g: UGraph,
                         regime_K: float = 0.1, dst_radius: float | None = None,
                         cs_radius: float | None = None, n_nodes: int | None = None,
                         allow_shrink: bool = False, lip_tol: float = 1e-6) -> UGraph:
    """One graph transform ``graph(Tg) = f~(graph g) restricted to B^u(dst_radius)``.

    With ``allow_shrink`` the destination domain is reduced to the largest
    symmetric interval covered by the image instead of failing.
    """
    r_dst = float(dst_frame.chart_radius if dst_radius is None else dst_radius)
    cs_r = float(dst_frame.chart_radius if cs_radius is None else cs_radius)
    n = n_nodes or len(g.u)
    Z = g.chart_points()
    W = connecting_map(Z)
    phi = W[:, 0]
    scale = max(r_dst, np.max(np.abs(phi)))
    # chart coordinates inherit the rounding of torus coordinates of size ~1
    floor = 0.0
    if hasattr(connecting_map, "dst"):
        floor = 16 * np.finfo(float).eps * np.linalg.norm(connecting_map.dst.L_inv, 2)
    tol = max(4e-15 * scale, floor)
    if allow_shrink:
        reach = min(abs(phi[0]), abs(phi[-1])) if phi[0] * phi[-1] < 0 else 0.0
        r_dst = min(r_dst, reach * (1.0 - 1e-9))
    if r_dst <= 0 or r_dst < MIN_CELLS * 2 * g.h * 1e-9:
        raise NewtonDivergence("image of the graph does not cross the destination chart")
    targets = np.linspace(-r_dst, r_dst, n)

    def fun(u):
        return connecting_map(np.column_stack([u, g(u)]))[:, 0]

    def dfun(u):
        J = connecting_map.jacobian(np.column_stack([u, g(u)]))
        return J[..., 0, 0] + J[..., 0, 1] * g.derivative(u)

    u_pre = _solve_monotone(fun, dfun, targets, g.u, phi, tol)
    img = connecting_map(np.column_stack([u_pre, g(u_pre)]))
    vals = img[:, 1]
    if np.max(np.abs(vals)) > cs_r * (1 + 1e-9):
        raise ChartOverflow(f"graph leaves the chart: |v| = {np.max(np.abs(vals)):.3e} > {cs_r:.3e}")
    slope0 = float("nan")
    if not math.isnan(g.slope0):
        J = connecting_map.jacobian(np.array([0.0, float(g(0.0))]))
        s = g.slope0
        slope0 = float((J[1, 0] + J[1, 1] * s) / (J[0, 0] + J[0, 1] * s))
    out = UGraph(dst_frame, r_dst, targets, vals, cs_radius=cs_r, slope0=slope0,
                 meta={"preimages": u_pre})
    if out.lip > regime_K * (1 + lip_tol):
        raise ConeViolation(f"Lip(Tg) = {out.lip:.4g} exceeds regime bound {regime_K:.4g}")
    return out


def inclusion_residual(g: UGraph, connecting_map, tg: UGraph) -> float:
    """Max distance from ``f~^{-1}(graph Tg)`` to ``graph g`` (cs component)."""
    back = connecting_map.inverse(tg.chart_points())
    return float(np.max(np.abs(back[:, 1] - g(back[:, 0]))))


def expansion_ratio(g: UGraph, connecting_map, n_pairs=500, seed=0) -> float:
    """Min of ``|f~z1 - f~z2| / |z1 - z2|`` over random pairs on ``graph g``."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(-g.radius, g.radius, (n_pairs, 2))
    z1 = np.column_stack([u[:, 0], g(u[:, 0])])
    z2 = np.column_stack([u[:, 1], g(u[:, 1])])
    num = np.max(np.abs(connecting_map(z1) - connecting_map(z2)), axis=1)
    den = np.max(np.abs(z1 - z2), axis=1)
    m = den > 0
    return float(np.min(num[m] / den[m]))


# ---------------------------------------------------------------- schedules

@dataclass(frozen=True)
class TransformSchedule:
    """Slope-reduction and domain-growth phases of an iterated slanted transform."""

    K0: float
    m0: int
    m1: int
    r0: float
    r1_bar: float
    lam: float
    K0_bar: float = 0.1

    def __post_init__(self):
        if self.K0 <= 0:
            raise ValueError("K0 must be positive")
        if self.K0 > self.K0_bar and not self.K0 * math.exp(-self.m0 * self.lam / 2) < self.K0_bar:
            raise ValueError("schedule does not reduce K0 below K0_bar within m0 steps")

    @classmethod
    def from_constants(cls, K0, lam, r0, r1_bar, K0_bar=0.1, settle=2):
        """``m0 = ceil(2 log(K0/K0_bar)/lam)``; ``m1`` covers the domain growth plus ``settle`` steps."""
        m0 = max(0, math.ceil(2 * math.log(K0 / K0_bar) / lam)) if K0 > K0_bar else 0
        if K0 > K0_bar and K0 * math.exp(-m0 * lam / 2) >= K0_bar:
            m0 += 1
        rho0 = min(1.0, 1.0 / K0)
        need = r1_bar / (rho0 * r0)
        m1p = max(0, math.ceil(math.log(need) / (lam / 2))) if need > 1 else 0
        return cls(K0=float(K0), m0=m0, m1=m1p + settle, r0=float(r0), r1_bar=float(r1_bar),
                   lam=float(lam), K0_bar=float(K0_bar))

    def d(self, k):
        return self.r0 if k <= self.m0 else self.r1_bar

    def slope_bound(self, k):
        """Cone bound for ``g_k`` (the graph after ``k`` transforms)."""
        return max(self.K0 * math.exp(-k * self.lam / 2), self.K0_bar)

    def to_dict(self):
        return {"K0": self.K0, "m0": self.m0, "m1": self.m1, "r0": self.r0,
                "r1_bar": self.r1_bar, "lambda": self.lam, "K0_bar": self.K0_bar}


def _frames_along(family, path, p, t0, t1, params, kind, radius, n_past, n_future):
    """Frames at times t0..t1 along the orbit with x_0 = p."""
    of = orbit_frames(family, path, p, t0, t1, params, n_past, n_future)
    if kind == "lyapunov":
        return of.frames()
    return [euclidean_frame(of.points[k], of.e_u[k], of.e_cs[k], radius, time=int(t))
            for k, t in enumerate(of.times)]


def iterate_slanted_transform(family: MapFamily, path: NoisePath, start_point,
                              schedule: TransformSchedule, g0: UGraph, n: int,
                              params: ChartParams, frames: str = "lyapunov",
                              working_radius: float | None = None,
                              n_past: int = 40, n_future: int = 40, frame_list=None):
    """Transforms ``g_1..g_n`` of ``g0`` along the orbit starting at time ``-n``.

    ``start_point`` is the orbit point at time ``-n``; ``g0`` must live in a
    chart at that point (it is re-based onto the computed frame).  In
    Lyapunov frames the domain of ``g_k`` is ``rho_k d_k / l_k``; in
    Euclidean frames ``d_k`` is replaced by ``working_radius`` scaled by
    ``d_k / r1_bar``.
    """
    n = int(n)
    if n < schedule.m0 + schedule.m1:
        raise ValueError("n must be at least m0 + m1")
    shifted = path.shift(-n)
    if frame_list is None:
        frame_list = _frames_along(family, shifted, np.asarray(start_point, dtype=float), 0, n,
                                   params, frames, working_radius, n_past, n_future)
    lam = schedule.lam

    def dom(k, frame):
        if frames == "lyapunov":
            return schedule.d(k) / frame.l_value
        return working_radius * schedule.d(k) / schedule.r1_bar

    rho = min(1.0, 1.0 / schedule.K0)
    f0 = frame_list[0]
    r = min(g0.radius, rho * dom(0, f0))
    g = replace(g0.restrict(r), frame=f0, cs_radius=dom(0, f0))
    out = []
    for k in range(n):
        src, dst = frame_list[k], frame_list[k + 1]
        cm = ConnectingMap(family, shifted.value(k + 1), src, dst)
        rho = min(rho * math.exp(lam / 2), 1.0)
        want = rho * dom(k + 1, dst)
        try:
            g = graph_transform_step(src, dst, cm, g, regime_K=schedule.slope_bound(k + 1),
                                     dst_radius=want, cs_radius=dom(k + 1, dst),
                                     allow_shrink=True)
        except NumericalFailure as exc:
            raise StepFailure(k + 1, exc) from exc
        g.meta.update(step=k + 1, full_domain=bool(g.radius >= want * (1 - 1e-6)),
                      target_radius=want)
        out.append(g)
    return out


# ---------------------------------------------------------------- unstable manifolds

def local_unstable_manifold(family: MapFamily, path: NoisePath, p, n_past: int,
                            radius: float | None = None, params: ChartParams | None = None,
                            frames: str = "lyapunov", regime_K: float = 0.1,
                            track_convergence: bool = False, n_dir: int = 40):
    """Local unstable manifold at ``(p, omega)`` as a graph in the time-0 frame.

    Iterates the graph transform on the zero graph from time ``-n_past``.  In
    Lyapunov frames the domain at each time is ``radius / l`` (``radius``
    defaults to ``delta1``); in Euclidean frames ``radius`` is absolute.
    With ``track_convergence`` the successive differences
    ``|0^k - 0^{k+1}|'`` for ``k = 1..n_past-1`` are stored in
    ``meta['increments']``.
    """
    if params is None:
        raise ValueError("chart parameters are required")
    p = np.asarray(p, dtype=float)
    if radius is None:
        radius = params.delta1
    fl = _frames_along(family, path, p, -n_past, 0, params, frames, radius, n_dir, n_dir)

    def dom(frame):
        return radius / frame.l_value if frames == "lyapunov" else radius

    def run(k):
        g = UGraph.line(fl[n_past - k], dom(fl[n_past - k]), 0.0, cs_radius=dom(fl[n_past - k]))
        for j in range(n_past - k, n_past):
            src, dst = fl[j], fl[j + 1]
            cm = ConnectingMap(family, path.value(dst.time), src, dst)
            try:
                g = graph_transform_step(src, dst, cm, g, regime_K=regime_K, dst_radius=dom(dst),
                                         cs_radius=dom(dst))
            except NumericalFailure as exc:
                raise StepFailure(j + 1 - n_past, exc) from exc
        return g

    g = run(n_past)
    g.meta["n_past"] = n_past
    if track_convergence:
        prev = run(1)
        incs = []
        for k in range(2, n_past + 1):
            cur = g if k == n_past else run(k)
            incs.append(graph_difference_prime(prev, cur))
            prev = cur
        g.meta["increments"] = np.array(incs)
    return g


# ---------------------------------------------------------------- axis switching

def _frame_axes(frame: ChartFrame):
    cu = frame.L[:, 0]
    cc = frame.L[:, 1]
    return cu, cc, np.linalg.norm(cu), np.linalg.norm(cc)


def line_distance(a, b):
    """Hausdorff distance between the unit balls of two lines (= 2 sin(angle/2))."""
    a = np.asarray(a, dtype=float) / np.linalg.norm(a)
    b = np.asarray(b, dtype=float) / np.linalg.norm(b)
    return float(min(np.linalg.norm(a - b), np.linalg.norm(a + b)))


@dataclass(frozen=True)
class SwitchBudget:
    """Tolerances for the axis-switch hypotheses."""

    L: float = 10.0
    eps1: float | None = None
    eps2: float | None = None

    def resolve(self, rho):
        e1 = self.eps1 if self.eps1 is not None else rho / (4.0 * self.L)
        e2 = self.eps2 if self.eps2 is not None else 1.0 / (20.0 * self.L)
        return e1, e2


def euclid_lip(g: UGraph, extent=None) -> float:
    """Lipschitz constant of the graph in the Euclidean axes of its frame."""
    _, _, nu, nc = _frame_axes(g.frame)
    u, v = g.u, g.g
    if extent is not None:
        m = np.abs(u) * nu <= extent * (1 + 1e-12)
        u, v = u[m], v[m]
    return lipschitz(u, v) * nc / nu


def switch_axes(g: UGraph, target: ChartFrame, rho: float, check: bool = True,
                budget: SwitchBudget = SwitchBudget(), n_nodes: int = N_NODES) -> UGraph:
    """Re-graph ``g`` (living in frame y) over the u-axis of ``target`` on ``[-rho, rho]``.

    ``rho`` is measured in target chart units; for Euclidean target frames it
    is a length in the tangent plane.
    """
    src = g.frame
    cu_y, cc_y, nu_y, nc_y = _frame_axes(src)
    if check:
        e1, e2 = budget.resolve(rho)
        if max(src.proj_norm, target.proj_norm) > budget.L:
            raise HypothesisFailure("i", f"projection norms {src.proj_norm:.3g}, "
                                         f"{target.proj_norm:.3g} exceed L = {budget.L:.3g}")
        dist = float(torus_distance(src.base, target.base))
        if dist >= e1:
            raise HypothesisFailure("ii.1", f"d(x, y) = {dist:.3e} >= eps1 = {e1:.3e}")
        dE = line_distance(src.e_u, target.e_u)
        dF = line_distance(src.e_cs, target.e_cs)
        if max(dE, dF) >= e2:
            raise HypothesisFailure("ii.2", f"axis distance {max(dE, dF):.3e} >= eps2 = {e2:.3e}")
        if g.radius * nu_y < 2 * rho * (1 - 1e-9):
            raise HypothesisFailure("iii", f"graph extent {g.radius * nu_y:.3e} < 2 rho")
        lip = euclid_lip(g, 2 * rho)
        if lip > 0.1 * (1 + 1e-9):
            raise HypothesisFailure("iii", f"Lip = {lip:.4g} > 1/10 on the doubled domain")
    offset = torus_delta(src.base, target.base)
    M = target.L_inv @ src.L
    c = target.L_inv @ offset
    st = g.chart_points() @ M.T + c
    s_nodes = st[:, 0]
    targets = np.linspace(-rho, rho, n_nodes)

    def fun(u):
        return M[0, 0] * u + M[0, 1] * g(u) + c[0]

    def dfun(u):
        return M[0, 0] + M[0, 1] * g.derivative(u)

    tol = max(4e-15 * max(rho, float(np.max(np.abs(s_nodes)))),
              16 * np.finfo(float).eps * np.linalg.norm(target.L_inv, 2))
    try:
        u_pre = _solve_monotone(fun, dfun, targets, g.u, s_nodes, tol)
    except NewtonDivergence as exc:
        raise ReGraphFailure(str(exc)) from exc
    t = M[1, 0] * u_pre + M[1, 1] * g(u_pre) + c[1]
    if np.max(np.abs(t)) > rho * (1 + 1e-9):
        raise ChartOverflow(f"re-graphed curve leaves F_x(rho): {np.max(np.abs(t)):.3e}")
    return UGraph(target, float(rho), targets, t, cs_radius=float(rho),
                  meta={"source_base": src.base.tolist()})


def containment_residual(g: UGraph, switched: UGraph, frac=0.5) -> float:
    """Distance of the ``frac*rho`` part of ``g`` from the switched graph."""
    src, tgt = g.frame, switched.frame
    _, _, nu, _ = _frame_axes(src)
    M = tgt.L_inv @ src.L
    c = tgt.L_inv @ torus_delta(src.base, tgt.base)
    m = np.abs(g.u) * nu <= frac * switched.radius
    st = g.chart_points()[m] @ M.T + c
    inside = np.abs(st[:, 0]) <= switched.radius
    if not inside.any():
        return float("inf")
    return float(np.max(np.abs(st[inside, 1] - switched(st[inside, 0]))))


# ---------------------------------------------------------------- stacks

@dataclass
class LeafStack:
    """Leaves re-graphed over the reference box ``E^u_*(r) x E^cs_*(r)``."""

    reference: ChartFrame
    r_star: float
    kind: str
    leaves: dict = field(default_factory=dict)
    rejections: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    depth: int | None = None

    def ids(self):
        return list(self.leaves)

    def transverse(self):
        """cs-coordinate of each leaf where it crosses the reference cs-axis."""
        return {k: float(g(0.0)) for k, g in self.leaves.items()}

    def max_lip(self):
        return max((g.lip for g in self.leaves.values()), default=0.0)

    def ordered(self):
        tr = self.transverse()
        keys = sorted(tr, key=tr.get)
        return keys, np.array([tr[k] for k in keys])

    def __len__(self):
        return len(self.leaves)


def reference_frame(family: MapFamily, path: NoisePath, x_star, r_star: float, params: ChartParams,
                    n_dir: int = 40) -> ChartFrame:
    """Euclidean frame at ``x_star`` with axes ``E^u``, ``E^cs`` and box radius ``r_star``."""
    of = orbit_frames(family, path, np.asarray(x_star, dtype=float), 0, 0, params, n_dir, n_dir)
    return euclidean_frame(of.points[0], of.e_u[0], of.e_cs[0], r_star)


def build_u_stack(family: MapFamily, path: NoisePath, base_points, x_star, r_star: float,
                  n_past: int, params: ChartParams, leaf_radius: float | None = None,
                  regime_K: float = 1.0, budget: SwitchBudget | None = None,
                  reference: ChartFrame | None = None) -> LeafStack:
    """Stack of local unstable leaves through ``base_points`` over the box at ``x_star``.

    Leaves are computed in Euclidean frames with radius ``leaf_radius``
    (default ``2.5 r_star``) and re-graphed onto the reference box.  Leaf
    failures are collected in ``rejections``.
    """
    ref = reference or reference_frame(family, path, x_star, r_star, params)
    R = leaf_radius or 2.5 * r_star
    budget = budget or SwitchBudget(L=max(2.0, 2 * ref.proj_norm), eps1=r_star / 2)
    pts = base_points.items() if isinstance(base_points, dict) else enumerate(np.atleast_2d(base_points))
    stack = LeafStack(reference=ref, r_star=r_star, kind="Wu")
    for key, p in pts:
        try:
            g = local_unstable_manifold(family, path, p, n_past, radius=R, params=params,
                                        frames="euclidean", regime_K=regime_K)
            gamma = switch_axes(g, ref, r_star, check=True, budget=budget)
        except NumericalFailure as exc:
            stack.rejections[key] = f"{type(exc).__name__}: {exc}"
            continue
        if gamma.lip > 1.0:
            stack.rejections[key] = f"Lip {gamma.lip:.3g} > 1 over the box"
            continue
        stack.leaves[key] = gamma
        stack.diagnostics[key] = {"lip": gamma.lip, "dlip": gamma.dlip,
                                  "base": np.asarray(p, dtype=float).tolist()}
    return stack
