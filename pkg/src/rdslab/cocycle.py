"""Cocycle composition along a noise path.

Index convention: ``f^n = f_{omega_n} o ... o f_{omega_1}`` forward and
``f^{-n} = f^{-1}_{omega_{-(n-1)}} o ... o f^{-1}_{omega_0}`` backward.  The
pullback map ``f^n_{theta^{-n} omega}`` applies ``f_{omega_{-n+1}}, ...,
f_{omega_0}`` in that order.  All functions accept a single point or an
array of points of shape ``(..., 2)``.
"""
from __future__ import annotations

import numpy as np

from .noise import NoisePath
from .systems import MapFamily


def _check_n(n):
    n = int(n)
    if n < 0:
        raise ValueError("n must be nonnegative")
    return n


def compose_forward(family: MapFamily, path: NoisePath, p, n: int):
    """``f^n_omega(p)``: apply the maps with noise indices 1..n."""
    n = _check_n(n)
    q = np.array(p, dtype=float, copy=True)
    for w in path.values(1, n + 1):
        q = family.eval(w, q)
    return q


def compose_backward(family: MapFamily, path: NoisePath, p, n: int):
    """``f^{-n}_omega(p)``: apply inverses with noise indices 0, -1, ..., -(n-1)."""
    n = _check_n(n)
    q = np.array(p, dtype=float, copy=True)
    for w in path.values(-n + 1, 1)[::-1]:
        q = family.inverse(w, q)
    return q


def compose_pullback(family: MapFamily, path: NoisePath, p, n: int):
    """``f^n_{theta^{-n} omega}(p)``: apply the maps with noise indices -n+1..0."""
    n = _check_n(n)
    q = np.array(p, dtype=float, copy=True)
    for w in path.values(-n + 1, 1):
        q = family.eval(w, q)
    return q


def forward_orbit(family: MapFamily, path: NoisePath, p, n: int, start: int = 0):
    """Points ``x_start, ..., x_{start+n}`` with ``x_start = p``.

    The step from ``x_t`` to ``x_{t+1}`` uses ``omega_{t+1}``.  Returns an
    array of shape ``(n + 1,) + p.shape``.
    """
    n = _check_n(n)
    p = np.asarray(p, dtype=float)
    out = np.empty((n + 1,) + p.shape)
    out[0] = p
    for k, w in enumerate(path.values(start + 1, start + n + 1)):
        out[k + 1] = family.eval(w, out[k])
    return out


def backward_orbit(family: MapFamily, path: NoisePath, p, n: int, start: int = 0):
    """Points ``x_start, x_{start-1}, ..., x_{start-n}`` with ``x_start = p``.

    ``x_{t-1} = f^{-1}_{omega_t}(x_t)``.  Row ``k`` holds ``x_{start-k}``.
    """
    n = _check_n(n)
    p = np.asarray(p, dtype=float)
    out = np.empty((n + 1,) + p.shape)
    out[0] = p
    ws = path.values(start - n + 1, start + 1)[::-1]
    for k, w in enumerate(ws):
        out[k + 1] = family.inverse(w, out[k])
    return out


def orbit_segment(family: MapFamily, path: NoisePath, p, t0: int, t1: int):
    """Orbit points ``x_t`` for ``t0 <= t <= t1`` given ``x_0 = p`` (``t0 <= 0 <= t1``).

    Returns ``(times, points)`` with points of shape ``(t1 - t0 + 1,) + p.shape``.
    """
    if not t0 <= 0 <= t1:
        raise ValueError("orbit segment must contain time 0")
    back = backward_orbit(family, path, p, -t0)
    fwd = forward_orbit(family, path, p, t1)
    pts = np.concatenate([back[::-1], fwd[1:]], axis=0)
    return np.arange(t0, t1 + 1), pts


def step_jacobians(family: MapFamily, path: NoisePath, orbit, start: int = 0):
    """Jacobians ``Df_{omega_{t+1}}(x_t)`` along a forward orbit beginning at ``start``."""
    n = orbit.shape[0] - 1
    ws = path.values(start + 1, start + n + 1)
    if orbit.ndim == 3:
        ws = ws[:, None, :]
    return family.jacobian(ws, orbit[:-1])


def jacobian_forward(family: MapFamily, path: NoisePath, p, n: int):
    """Jacobian of ``f^n_omega`` at ``p`` as the ordered product of step Jacobians."""
    orbit = forward_orbit(family, path, p, n)
    J = np.eye(2)
    for Jk in step_jacobians(family, path, orbit):
        J = Jk @ J
    return J
