"""Random map families on the two-torus.

Every family is of the form ``f_omega(p) = T_omega(h(A p))`` where ``A`` is an
integer matrix, ``h`` a lift-commuting diffeomorphism and ``T_omega`` the
translation by ``omega``.  All evaluators broadcast over leading axes: points
have shape ``(..., 2)`` and noise values shape ``(..., 2)``.
"""
from __future__ import annotations

import numpy as np

CAT = np.array([[2.0, 1.0], [1.0, 1.0]])
CAT_INV = np.array([[1.0, -1.0], [-1.0, 2.0]])
TWO_PI = 2.0 * np.pi


def wrap(p):
    """Reduce coordinates into [0, 1)."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 0:
        q = p - np.floor(p)
        return q if q < 1.0 else q * 0.0
    q = np.floor(p)
    np.subtract(p, q, out=q)
    # tiny negative inputs round up to exactly 1.0
    q[q >= 1.0] = 0.0
    return q


def torus_delta(p, q):
    """Shortest displacement ``p - q`` on the torus, componentwise in [-1/2, 1/2)."""
    d = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
    return d - np.floor(d + 0.5)


def torus_distance(p, q, metric="euclid"):
    """Flat-torus distance; ``metric='sup'`` gives the componentwise max norm."""
    d = torus_delta(p, q)
    if metric == "sup":
        return np.max(np.abs(d), axis=-1)
    return np.hypot(d[..., 0], d[..., 1])


def _matvec(M, p):
    return p @ M.T


class MapFamily:
    """Base class for families ``f_omega = T_omega o h o A``.

    Subclasses supply the nonlinear factor ``h`` through ``_h``, ``_h_inv``
    and ``_dh``; everything else is shared.  ``lift`` and ``inverse_lift``
    act on lifts to R^2 (no reduction mod 1), which is what chart
    connecting maps need near the wrap-around.
    """

    name = "base"
    noise_dim = 2
    dim_u = 1
    dim_cs = 1
    linear = False

    def __init__(self, matrix=CAT, matrix_inv=CAT_INV):
        self.A = np.asarray(matrix, dtype=float)
        self.A_inv = np.asarray(matrix_inv, dtype=float)

    # nonlinear factor, overridden by subclasses
    def _h(self, q):
        return q

    def _h_inv(self, q):
        return q

    def _dh(self, q):
        out = np.zeros(q.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 1, 1] = 1.0
        return out

    def _c2_h(self):
        """Bounds (sup|Dh|, sup|Dh^-1|, sup|D2h|, sup|D2(h^-1)|)."""
        return 1.0, 1.0, 0.0, 0.0

    def lift(self, omega, p):
        # _h may work in place on the fresh array returned by _matvec
        p = np.asarray(p, dtype=float)
        return self._h(_matvec(self.A, p)) + omega

    def inverse_lift(self, omega, q):
        q = np.asarray(q, dtype=float)
        return _matvec(self.A_inv, self._h_inv(q - omega))

    def eval(self, omega, p):
        return wrap(self.lift(omega, p))

    def inverse(self, omega, p):
        return wrap(self.inverse_lift(omega, p))

    def jacobian(self, omega, p):
        p = np.asarray(p, dtype=float)
        dh = self._dh(_matvec(self.A, p))
        return dh @ self.A

    def c2_bound(self, omega=None):
        dh, dhi, d2h, d2hi = self._c2_h()
        nA = np.linalg.norm(self.A, 2)
        nAi = np.linalg.norm(self.A_inv, 2)
        return float(max(dh * nA, nAi * dhi, d2h * nA * nA, nAi * d2hi))

    def params(self) -> dict:
        return {}

    def describe(self) -> dict:
        return {"name": self.name, **self.params()}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


class LinearCat(MapFamily):
    """System A: ``f_omega(p) = A p + omega``."""

    name = "A"
    linear = True


class ShearCat(MapFamily):
    """System B: ``T_omega o g_eps o A`` with ``g_eps(x, y) = (x + eps sin 2 pi y, y)``."""

    name = "B"

    def __init__(self, eps=0.1):
        super().__init__()
        self.eps = float(eps)

    def _h(self, q):
        q[..., 0] += self.eps * np.sin(TWO_PI * q[..., 1])
        return q

    def _h_inv(self, q):
        out = q.copy()
        out[..., 0] -= self.eps * np.sin(TWO_PI * q[..., 1])
        return out

    def _dh(self, q):
        out = super()._dh(q)
        out[..., 0, 1] = TWO_PI * self.eps * np.cos(TWO_PI * q[..., 1])
        return out

    def _c2_h(self):
        c = TWO_PI * abs(self.eps)
        # operator norm of the shear [[1, c], [0, 1]]; the inverse has the same
        n1 = 0.5 * (c + np.sqrt(c * c + 4.0))
        return n1, n1, TWO_PI * c, TWO_PI * c

    def params(self):
        return {"eps": self.eps}


class DissipativeCat(MapFamily):
    """System C: ``T_omega o h_a o A`` with ``h_a(x, y) = (x, y + a/(2 pi) sin 2 pi y)``.

    ``h_a`` is a lift-commuting diffeomorphism for ``|a| < 1``; its inverse is
    found by a monotone Newton iteration started from the linear guess.
    """

    name = "C"

    def __init__(self, a=0.3):
        a = float(a)
        if not abs(a) < 1.0:
            raise ValueError("System C needs |a| < 1")
        super().__init__()
        self.a = a

    def _h(self, q):
        q[..., 1] += self.a / TWO_PI * np.sin(TWO_PI * q[..., 1])
        return q

    def _solve_y(self, t):
        a = self.a
        y = np.array(t, dtype=float, copy=True)
        for _ in range(60):
            s = TWO_PI * y
            r = y + a / TWO_PI * np.sin(s) - t
            y_new = y - r / (1.0 + a * np.cos(s))
            if np.all(np.abs(y_new - y) <= 1e-15 * (1.0 + np.abs(y))):
                return y_new
            y = y_new
        return y

    def _h_inv(self, q):
        out = q.copy()
        out[..., 1] = self._solve_y(q[..., 1])
        return out

    def _dh(self, q):
        out = super()._dh(q)
        out[..., 1, 1] = 1.0 + self.a * np.cos(TWO_PI * q[..., 1])
        return out

    def _c2_h(self):
        a = abs(self.a)
        return 1.0 + a, 1.0 / (1.0 - a), TWO_PI * a, TWO_PI * a / (1.0 - a) ** 3

    def params(self):
        return {"a": self.a}


class Translations(MapFamily):
    """Pure random translations ``p + omega`` (isometries, zero exponents)."""

    name = "T"
    linear = True

    def __init__(self):
        super().__init__(np.eye(2), np.eye(2))


_REGISTRY = {"A": LinearCat, "B": ShearCat, "C": DissipativeCat, "T": Translations}


def get_system(name: str, **params) -> MapFamily:
    """Look up a bundled family by name (``A``, ``B``, ``C`` or ``T``)."""
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; expected one of {sorted(_REGISTRY)}") from None
    return cls(**params)


def system_names():
    return sorted(_REGISTRY)
