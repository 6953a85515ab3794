"""Derivative cocycle: Lyapunov exponents, Oseledets directions and chart frames.

Chart frames use finite-horizon Lyapunov norms.  For a point ``x_t`` on an
orbit with splitting ``e_u(t), e_cs(t)`` and one-step growth factors
``J_u(s) = |Df(x_s) e_u(s)|``, ``J_cs(s) = |Df(x_s) e_cs(s)|``::

    n_u(t)  = sum_{k=0}^{N} exp(lam k)   prod_{j=1}^{k} 1 / J_u(t - j)
    n_cs(t) = sum_{k=0}^{N} exp(-d0 k)   prod_{j=0}^{k-1} J_cs(t + j)

and ``L(t) = [e_u / n_u, e_cs / n_cs] / s`` with ``s`` chosen so that
``|L z| <= |z|_max``.  The size function is tempered over a finite window
of the orbit so that ``l(t+1) / l(t)`` stays within ``exp(+-d2)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cocycle import backward_orbit, forward_orbit, orbit_segment
from .errors import DegenerateJacobian
from .noise import NoisePath
from .systems import MapFamily, torus_delta, wrap

GENERIC_VECTOR = (1.0, 0.37)


def canonical_sign(v):
    """Flip unit vectors so the x-component is positive (y positive on ties)."""
    v = np.asarray(v, dtype=float)
    flip = (v[..., 0] < 0) | ((v[..., 0] == 0) & (v[..., 1] < 0))
    return np.where(flip[..., None], -v, v)


def _normalize(v):
    n = np.sqrt(np.sum(v * v, axis=-1))
    return v / n[..., None], n


def angle_between(u, v):
    """Angle between the lines spanned by ``u`` and ``v`` (in [0, pi/2])."""
    u, _ = _normalize(np.asarray(u, dtype=float))
    v, _ = _normalize(np.asarray(v, dtype=float))
    c = np.abs(np.sum(u * v, axis=-1))
    s = np.abs(u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0])
    return np.arctan2(s, c)


# ---------------------------------------------------------------- exponents

@dataclass(frozen=True)
class ExponentReport:
    lambda1: float
    lambda2: float
    n_steps: int
    convergence_trace: np.ndarray
    log_det_mean: float = float("nan")
    transient: int = 0

    def to_row(self, **extra) -> dict:
        row = dict(extra)
        row.update(n=self.n_steps, lambda1=self.lambda1, lambda2=self.lambda2,
                   log_det_mean=self.log_det_mean, transient=self.transient)
        return row


def orbit_jacobians(family: MapFamily, path: NoisePath, p, n: int, start: int = 0):
    """Orbit ``x_start..x_{start+n}`` and the step Jacobians along it."""
    orbit = forward_orbit(family, path, p, n, start=start)
    ws = path.values(start + 1, start + n + 1)
    if orbit.ndim == 3:
        ws = ws[:, None, :]
    return orbit, family.jacobian(ws, orbit[:-1])


def lyapunov_qr(family: MapFamily, path: NoisePath, p, n: int, transient: int = 100,
                trace_points: int = 200) -> ExponentReport:
    """Lyapunov exponents by repeated 2x2 QR (Gram-Schmidt) along the forward orbit.

    The first ``transient`` steps only align the orthonormal frame and are
    not counted; the reported exponents average the following ``n`` steps.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    transient = max(int(transient), 0)
    _, jacs = orbit_jacobians(family, path, p, n + transient)
    det = jacs[:, 0, 0] * jacs[:, 1, 1] - jacs[:, 0, 1] * jacs[:, 1, 0]
    bad = np.flatnonzero(np.abs(det) < 1e-14)
    if bad.size:
        k = int(bad[0])
        raise DegenerateJacobian(f"|det Df| = {abs(det[k]):.3e} at step {k + 1}")

    every = max(1, n // max(int(trace_points), 1))
    q1x, q1y, q2x, q2y = 1.0, 0.0, 0.0, 1.0
    s1 = s2 = 0.0
    trace = []
    log, sqrt = math.log, math.sqrt
    for k, (a, b, c, d) in enumerate(jacs.reshape(-1, 4).tolist()):
        w1x, w1y = a * q1x + b * q1y, c * q1x + d * q1y
        r11 = sqrt(w1x * w1x + w1y * w1y)
        q1x, q1y = w1x / r11, w1y / r11
        w2x, w2y = a * q2x + b * q2y, c * q2x + d * q2y
        r12 = q1x * w2x + q1y * w2y
        w2x, w2y = w2x - r12 * q1x, w2y - r12 * q1y
        r22 = sqrt(w2x * w2x + w2y * w2y)
        q2x, q2y = w2x / r22, w2y / r22
        if k >= transient:
            s1 += log(r11)
            s2 += log(r22)
            m = k - transient + 1
            if m % every == 0 or m == n:
                trace.append((m, s1 / m, s2 / m))
    l1, l2 = sorted((s1 / n, s2 / n), reverse=True)
    log_det = float(np.mean(np.log(np.abs(det[transient:]))))
    return ExponentReport(l1, l2, n, np.array(trace), log_det, transient)


# ---------------------------------------------------------------- directions

def _push_direction(jacs, v):
    """Push ``v`` through the Jacobian sequence, renormalising every step.

    Returns the final unit vectors and the per-step growth factors.
    """
    growth = np.empty(jacs.shape[:-2])
    for k in range(jacs.shape[0]):
        v = np.einsum("...ij,...j->...i", jacs[k], v)
        v, growth[k] = _normalize(v)
    if not np.all(np.isfinite(v)):
        warnings.warn("non-finite direction while pushing tangent vectors", RuntimeWarning)
    return v, growth


def estimate_Eu(family: MapFamily, path: NoisePath, p, n_past: int):
    """Unstable direction at ``(p, omega)`` from an explicit finite past.

    Pushes the generic vector (1, 0.37) along the pullback orbit from time
    ``-n_past`` to 0.  Works on a point or an array of points.
    """
    n_past = int(n_past)
    if n_past < 1:
        raise ValueError("n_past must be >= 1")
    back = backward_orbit(family, path, p, n_past)[::-1]  # x_{-n}, ..., x_0
    ws = path.values(-n_past + 1, 1)
    if back.ndim == 3:
        ws = ws[:, None, :]
    jacs = family.jacobian(ws, back[:-1])
    v0 = np.broadcast_to(np.array(GENERIC_VECTOR), np.shape(p)).astype(float)
    v, _ = _push_direction(jacs, _normalize(v0)[0])
    return canonical_sign(v)


def estimate_Ecs(family: MapFamily, path: NoisePath, p, n_future: int):
    """Centre-stable direction at ``(p, omega)`` from the future ``omega_1..omega_n``.

    Pulls a generic covector back with transposed Jacobians; the most
    contracted direction is its orthogonal complement.  Never reads noise at
    indices ``<= 0``.
    """
    n_future = int(n_future)
    if n_future < 1:
        raise ValueError("n_future must be >= 1")
    orbit, jacs = orbit_jacobians(family, path, p, n_future)
    jt = np.swapaxes(jacs, -1, -2)[::-1]
    c0 = np.broadcast_to(np.array(GENERIC_VECTOR), np.shape(p)).astype(float)
    c, _ = _push_direction(jt, _normalize(c0)[0])
    return canonical_sign(np.stack([-c[..., 1], c[..., 0]], axis=-1))


@dataclass(frozen=True)
class Splitting:
    e_u: np.ndarray
    e_cs: np.ndarray
    proj_norm_u: float
    proj_norm_cs: float

    def __post_init__(self):
        if abs(self.proj_norm_u - self.proj_norm_cs) > 1e-10 * self.proj_norm_u:
            raise ValueError("projection norms disagree")


def projection_norm(e_u, e_cs):
    """Norm of the projection onto one line along the other: 1 / sin(angle)."""
    s = np.abs(e_u[..., 0] * e_cs[..., 1] - e_u[..., 1] * e_cs[..., 0])
    return 1.0 / s


def splitting(family: MapFamily, path: NoisePath, p, n_past: int = 40, n_future: int = 40) -> Splitting:
    e_u = estimate_Eu(family, path, p, n_past)
    e_cs = estimate_Ecs(family, path, p, n_future)
    pn = float(projection_norm(e_u, e_cs))
    return Splitting(e_u, e_cs, pn, pn)


# ---------------------------------------------------------------- charts

@dataclass(frozen=True)
class ChartParams:
    """Chart constants.  ``lam = lambda0 - delta0`` is the chart expansion rate."""

    lambda0: float
    delta0: float
    delta1: float = 0.1
    delta2: float = 0.0
    horizon: int = 30
    K0_bar: float = 0.1
    r1_bar: float = 0.1
    temper_window: int = 20

    def __post_init__(self):
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if not 0 < self.delta0 < self.lambda0:
            raise ValueError("need 0 < delta0 < lambda0")
        if self.delta2 <= 0:
            raise ValueError("delta2 must be positive")
        if self.K0_bar > 0.1:
            raise ValueError("K0_bar must not exceed 1/10")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def lam(self) -> float:
        return self.lambda0 - self.delta0

    @property
    def truncation_error(self) -> float:
        d = self.delta0
        return math.exp(-self.horizon * d) / (1.0 - math.exp(-d))

    @classmethod
    def from_lambda0(cls, lambda0: float, **overrides) -> "ChartParams":
        d = lambda0 / 20.0
        kw = dict(lambda0=lambda0, delta0=d, delta2=d)
        kw.update({k: v for k, v in overrides.items() if v is not None})
        if "r1_bar" not in overrides or overrides.get("r1_bar") is None:
            kw["r1_bar"] = kw.get("delta1", 0.1)
        return cls(**kw)

    def to_dict(self) -> dict:
        return {"lambda0": self.lambda0, "lambda": self.lam, "delta0": self.delta0,
                "delta1": self.delta1, "delta2": self.delta2, "horizon": self.horizon,
                "K0_bar": self.K0_bar, "r1_bar": self.r1_bar,
                "temper_window": self.temper_window}


@dataclass(frozen=True, eq=False)
class ChartFrame:
    """Linear chart at ``base``: chart coordinates ``z`` map to ``base + L z``.

    ``chart_radius`` is the radius (max norm, chart units) of the chart
    domain; for Lyapunov charts it is ``delta1 / l_value``.
    """

    base: np.ndarray
    L: np.ndarray
    l_value: float
    chart_radius: float
    e_u: np.ndarray
    e_cs: np.ndarray
    proj_norm: float
    time: int = 0
    n_u: float = 1.0
    n_cs: float = 1.0
    raw_l: float = 1.0
    truncation_error: float = 0.0
    kind: str = "lyapunov"
    L_inv: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.L_inv is None:
            object.__setattr__(self, "L_inv", np.linalg.inv(self.L))

    def to_chart(self, p):
        """Chart coordinates of torus point(s) ``p`` (nearest lift)."""
        return torus_delta(p, self.base) @ self.L_inv.T

    def from_chart(self, z, reduce=True):
        q = self.base + np.asarray(z, dtype=float) @ self.L.T
        return wrap(q) if reduce else q

    def with_radius(self, radius: float) -> "ChartFrame":
        from dataclasses import replace
        return replace(self, chart_radius=float(radius))

    def to_dict(self) -> dict:
        return {"base": self.base.tolist(), "L": self.L.tolist(), "l_value": self.l_value,
                "chart_radius": self.chart_radius, "e_u": self.e_u.tolist(),
                "e_cs": self.e_cs.tolist(), "proj_norm": self.proj_norm, "time": self.time,
                "n_u": self.n_u, "n_cs": self.n_cs, "kind": self.kind,
                "truncation_error": self.truncation_error}


def euclidean_frame(base, e_u, e_cs, radius: float, time: int = 0) -> ChartFrame:
    """Frame whose axes are the unit vectors ``e_u``, ``e_cs`` themselves."""
    e_u = np.asarray(e_u, dtype=float)
    e_cs = np.asarray(e_cs, dtype=float)
    L = np.column_stack([e_u, e_cs])
    pn = float(projection_norm(e_u, e_cs))
    return ChartFrame(base=wrap(np.asarray(base, dtype=float)), L=L, l_value=max(pn, 1.0),
                      chart_radius=float(radius), e_u=e_u, e_cs=e_cs, proj_norm=pn,
                      time=int(time), raw_l=max(pn, 1.0), kind="euclidean")


@dataclass(frozen=True, eq=False)
class OrbitFrames:
    """Chart data at times ``t0..t1`` along one or several orbits.

    Arrays have a leading time axis; any further axes index the orbits.
    """

    times: np.ndarray
    points: np.ndarray
    L: np.ndarray
    l: np.ndarray
    raw_l: np.ndarray
    e_u: np.ndarray
    e_cs: np.ndarray
    proj: np.ndarray
    n_u: np.ndarray
    n_cs: np.ndarray
    params: ChartParams

    def __len__(self):
        return len(self.times)

    def index(self, t):
        return int(t - self.times[0])

    def frame(self, t: int, idx=()) -> ChartFrame:
        k = self.index(t)
        sel = (k,) + (idx if isinstance(idx, tuple) else (idx,))
        l = float(self.l[sel])
        return ChartFrame(base=self.points[sel].copy(), L=self.L[sel].copy(), l_value=l,
                          chart_radius=self.params.delta1 / l, e_u=self.e_u[sel].copy(),
                          e_cs=self.e_cs[sel].copy(), proj_norm=float(self.proj[sel]),
                          time=int(t), n_u=float(self.n_u[sel]), n_cs=float(self.n_cs[sel]),
                          raw_l=float(self.raw_l[sel]),
                          truncation_error=self.params.truncation_error)

    def frames(self, idx=()):
        return [self.frame(int(t), idx) for t in self.times]


def orbit_frames(family: MapFamily, path: NoisePath, p, t0: int, t1: int, params: ChartParams,
                 n_past: int = 40, n_future: int = 40) -> OrbitFrames:
    """Lyapunov chart frames at times ``t0..t1`` along the orbit with ``x_0 = p``."""
    if t0 > t1:
        raise ValueError("t0 must not exceed t1")
    N, H = params.horizon, params.temper_window
    lam, d0, d2 = params.lam, params.delta0, params.delta2
    lo = min(t0 - H - N - n_past, 0)
    hi = max(t1 + H + N + n_future, 0)
    times, pts = orbit_segment(family, path, p, lo, hi)
    ws = path.values(lo + 1, hi + 1)
    if pts.ndim == 3:
        ws = ws[:, None, :]
    jacs = family.jacobian(ws, pts[:-1])          # jacs[s - lo] = Df at x_s
    det = np.abs(jacs[..., 0, 0] * jacs[..., 1, 1] - jacs[..., 0, 1] * jacs[..., 1, 0])
    if np.any(det < 1e-14):
        raise DegenerateJacobian("singular Jacobian along orbit")
    pshape = np.shape(p)
    gen = _normalize(np.broadcast_to(np.array(GENERIC_VECTOR), pshape).astype(float))[0]

    # unstable directions, pushed forward from time lo
    nT = len(times)
    eu = np.empty((nT,) + pshape)
    eu[0] = gen
    log_ju = np.empty((nT - 1,) + pshape[:-1])
    v = gen
    for k in range(nT - 1):
        v, g = _normalize(np.einsum("...ij,...j->...i", jacs[k], v))
        log_ju[k] = np.log(g)
        eu[k + 1] = v
    # centre-stable covectors, pulled back from time hi
    ecs = np.empty((nT,) + pshape)
    c = gen
    ecs[-1] = np.stack([-c[..., 1], c[..., 0]], axis=-1)
    for k in range(nT - 2, -1, -1):
        c, _ = _normalize(np.einsum("...ji,...j->...i", jacs[k], c))
        ecs[k] = np.stack([-c[..., 1], c[..., 0]], axis=-1)
    log_jcs = np.log(np.linalg.norm(np.einsum("...ij,...j->...i", jacs, ecs[:-1]), axis=-1))
    eu = canonical_sign(eu)
    ecs = canonical_sign(ecs)

    # Lyapunov norms on the window [t0 - H, t1 + H]
    a, b = t0 - H - lo, t1 + H - lo + 1
    zeros = np.zeros((1,) + pshape[:-1])
    S_u = np.concatenate([zeros, np.cumsum(log_ju, axis=0)])
    S_cs = np.concatenate([zeros, np.cumsum(log_jcs, axis=0)])
    idx = np.arange(a, b)
    n_u = np.zeros((b - a,) + pshape[:-1])
    n_cs = np.zeros_like(n_u)
    for k in range(N + 1):
        n_u += np.exp(lam * k - (S_u[idx] - S_u[idx - k]))
        n_cs += np.exp(-d0 * k + (S_cs[idx + k] - S_cs[idx]))
    e_u, e_cs = eu[a:b], ecs[a:b]
    proj = projection_norm(e_u, e_cs)
    scale = np.maximum(1.0, 1.0 / n_u + 1.0 / n_cs)
    L = np.stack([e_u / (n_u * scale)[..., None], e_cs / (n_cs * scale)[..., None]], axis=-1)
    l1 = family.c2_bound()
    raw = np.maximum(1.0, scale * proj * np.maximum(n_u, n_cs)) * max(1.0, l1)

    # temper over +-H steps; the extra exp(d2) covers the neighbouring chart
    m = t1 - t0 + 1
    tempered = np.zeros((m,) + pshape[:-1])
    for j in range(-H, H + 1):
        tempered = np.maximum(tempered, math.exp(-d2 * abs(j)) * raw[H + j:H + j + m])
    tempered *= math.exp(d2)
    sl = slice(H, H + m)
    return OrbitFrames(times=np.arange(t0, t1 + 1), points=pts[t0 - lo:t1 - lo + 1],
                       L=L[sl], l=tempered, raw_l=raw[sl], e_u=e_u[sl], e_cs=e_cs[sl],
                       proj=proj[sl], n_u=n_u[sl], n_cs=n_cs[sl], params=params)


def build_chart_frame(family: MapFamily, path: NoisePath, p, params: ChartParams,
                      n_past: int = 40, n_future: int = 40) -> ChartFrame:
    """Lyapunov chart frame at ``(p, omega)`` (time 0)."""
    return orbit_frames(family, path, np.asarray(p, dtype=float), 0, 0, params,
                        n_past, n_future).frame(0)


def l_values(family: MapFamily, path: NoisePath, points, params: ChartParams, times,
             n_past: int = 40, n_future: int = 40, block: int = 20000) -> np.ndarray:
    """Tempered size function at the given times for many orbits (``x_0 = points``).

    Returns an array of shape ``(len(times), n_points)``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    times = [int(t) for t in times]
    t0, t1 = min(min(times), 0), max(max(times), 0)
    out = np.empty((len(times), len(points)))
    for s in range(0, len(points), block):
        of = orbit_frames(family, path, points[s:s + block], t0, t1, params, n_past, n_future)
        for i, t in enumerate(times):
            out[i, s:s + block] = of.l[t - t0]
    return out


# ---------------------------------------------------------------- connecting maps

class ConnectingMap:
    """``f~ = L_dst^{-1} o f_omega o (base_src + L_src .) - base_dst`` in chart coordinates.

    One lift is used for all points: the one taking the source base point
    nearest to the destination base point.  Long curves therefore stay
    continuous instead of being wrapped point by point.
    """

    def __init__(self, family: MapFamily, omega, src: ChartFrame, dst: ChartFrame):
        self.family = family
        self.omega = np.asarray(omega, dtype=float)
        self.src = src
        self.dst = dst
        a = family.lift(self.omega, src.base) - dst.base
        self._fwd_shift = np.floor(a + 0.5)
        b = family.inverse_lift(self.omega, dst.base) - src.base
        self._inv_shift = np.floor(b + 0.5)

    def __call__(self, z):
        y = self.src.base + np.asarray(z, dtype=float) @ self.src.L.T
        q = self.family.lift(self.omega, y)
        return (q - self.dst.base - self._fwd_shift) @ self.dst.L_inv.T

    def inverse(self, z):
        q = self.dst.base + np.asarray(z, dtype=float) @ self.dst.L.T
        y = self.family.inverse_lift(self.omega, q)
        return (y - self.src.base - self._inv_shift) @ self.src.L_inv.T

    def jacobian(self, z):
        y = self.src.base + np.asarray(z, dtype=float) @ self.src.L.T
        return self.dst.L_inv @ self.family.jacobian(self.omega, y) @ self.src.L


class LinearMap:
    """A fixed linear map of chart coordinates with the ``ConnectingMap`` interface."""

    def __init__(self, M):
        self.M = np.asarray(M, dtype=float)
        self.M_inv = np.linalg.inv(self.M)

    def __call__(self, z):
        return np.asarray(z, dtype=float) @ self.M.T

    def inverse(self, z):
        return np.asarray(z, dtype=float) @ self.M_inv.T

    def jacobian(self, z):
        return np.broadcast_to(self.M, np.shape(z)[:-1] + (2, 2))


def connecting_maps(family: MapFamily, path: NoisePath, frames):
    """Connecting maps between consecutive frames of an orbit (frame times must be consecutive)."""
    out = []
    for src, dst in zip(frames[:-1], frames[1:]):
        if dst.time != src.time + 1:
            raise ValueError("frames must be at consecutive times")
        out.append(ConnectingMap(family, path.value(dst.time), src, dst))
    return out


def estimate_lambda0(family: MapFamily, path: NoisePath, n: int = 20000, p=(0.1234, 0.5678)) -> float:
    """Top exponent estimate used to size chart constants."""
    return lyapunov_qr(family, path, np.asarray(p, dtype=float), n).lambda1
