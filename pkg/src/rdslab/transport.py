"""Measures on the torus: stationary densities, particle ensembles and push-forwards."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import NonConvergence
from .noise import NoiseLaw, NoisePath
from .systems import MapFamily, wrap

WEIGHT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Weighted point cloud.  ``weights`` sum to one; ``mass`` scales the whole measure."""

    points: np.ndarray
    weights: np.ndarray
    provenance: dict = field(default_factory=dict)
    mass: float = 1.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) == 0:
            raise ValueError("points must be a nonempty (n, 2) array")
        if w.shape != (len(pts),):
            raise ValueError("one weight per point required")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum():.15g}, not 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform_weights(cls, points, provenance=None, mass=1.0):
        n = len(points)
        return cls(points, np.full(n, 1.0 / n), provenance or {}, mass)

    def __len__(self):
        return len(self.points)

    def subset(self, mask, provenance=None):
        """Restriction to ``mask`` with renormalised weights; ``mass`` tracks the lost part."""
        w = self.weights[mask]
        tot = w.sum()
        if tot <= 0:
            raise ValueError("empty restriction")
        prov = dict(self.provenance, **(provenance or {}))
        return ParticleEnsemble(self.points[mask], w / tot, prov, self.mass * tot)

    def integrate(self, values):
        return float(self.mass * np.dot(self.weights, values))


@dataclass(frozen=True, eq=False)
class UlamDensity:
    """Cell masses on an ``m x m`` grid; ``cells[i, j]`` covers ``[i/m, (i+1)/m) x [j/m, (j+1)/m)``."""

    cells: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.cells, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("cells must be a square array")
        if np.any(c < 0):
            raise ValueError("cell masses must be nonnegative")
        if abs(c.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"cell masses sum to {c.sum():.15g}, not 1")
        object.__setattr__(self, "cells", c)

    @property
    def m(self):
        return self.cells.shape[0]

    @property
    def density(self):
        """Cellwise density with respect to Lebesgue measure."""
        return self.cells * self.m ** 2

    def at(self, points):
        idx = cell_index(points, self.m)
        return self.density[idx[..., 0], idx[..., 1]]

    @classmethod
    def uniform(cls, m):
        return cls(np.full((m, m), 1.0 / m ** 2))

    @classmethod
    def from_counts(cls, counts):
        counts = np.asarray(counts, dtype=float)
        return cls(counts / counts.sum())

    def l1(self, other: "UlamDensity") -> float:
        return float(np.abs(self.cells - other.cells).sum())


@dataclass(frozen=True, eq=False)
class TransferOperatorEstimate:
    grid_size: int
    matrix: sp.csr_matrix
    noise_samples: int

    def row_sums(self):
        return np.asarray(self.matrix.sum(axis=1)).ravel()


def cell_index(points, m):
    idx = np.floor(np.asarray(points) * m).astype(np.int64)
    return np.clip(idx, 0, m - 1)


def _uniform_stream(seed, n, cols):
    gen = np.random.Generator(np.random.Philox(seed))
    return gen.random((n, cols))


def _law_samples(law: NoiseLaw, seed: int, n: int):
    gen = np.random.Generator(np.random.Philox(seed))
    words = gen.integers(0, 2 ** 64, size=(n, 4), dtype=np.uint64, endpoint=False)
    return law.transform(words)


def build_transfer_operator(family: MapFamily, grid_size: int, noise_samples: int,
                            law: NoiseLaw = NoiseLaw(), seed: int = 0,
                            block_cells: int = 256) -> TransferOperatorEstimate:
    """Ulam matrix: row ``i`` is the empirical law of ``f_omega(x)`` for ``x`` uniform in cell ``i``."""
    m = int(grid_size)
    ncell = m * m
    rows, cols, vals = [], [], []
    for c0 in range(0, ncell, block_cells):
        c1 = min(c0 + block_cells, ncell)
        k = c1 - c0
        cells = np.arange(c0, c1)
        ci, cj = np.divmod(cells, m)
        s = seed * 1_000_003 + c0
        u = _uniform_stream(s, k * noise_samples, 2).reshape(k, noise_samples, 2)
        x = (np.stack([ci, cj], axis=1)[:, None, :] + u) / m
        w = _law_samples(law, s + 7919, k * noise_samples).reshape(k, noise_samples, 2)
        y = family.eval(w, x)
        idx = cell_index(y, m)
        dest = idx[..., 0] * m + idx[..., 1]
        src = np.repeat(cells, noise_samples)
        rows.append(src)
        cols.append(dest.ravel())
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    mat = sp.coo_matrix((np.full(len(r), 1.0 / noise_samples), (r, c)), shape=(ncell, ncell)).tocsr()
    mat.sum_duplicates()
    return TransferOperatorEstimate(m, mat, int(noise_samples))


def estimate_stationary(family: MapFamily, grid_size: int, noise_samples: int, tol: float = 1e-10,
                        law: NoiseLaw = NoiseLaw(), seed: int = 0, max_iter: int = 5000,
                        operator: TransferOperatorEstimate | None = None) -> UlamDensity:
    """Leading left fixed vector of the Ulam operator by power iteration."""
    if grid_size < 16:
        raise ValueError("grid_size must be >= 16")
    if noise_samples < 1000:
        raise ValueError("noise_samples must be >= 1000")
    op = operator or build_transfer_operator(family, grid_size, noise_samples, law, seed)
    PT = op.matrix.T.tocsr()
    v = np.full(grid_size ** 2, 1.0 / grid_size ** 2)
    diffs = []
    for _ in range(max_iter):
        w = PT @ v
        w /= w.sum()
        d = float(np.abs(w - v).sum())
        diffs.append(d)
        v = w
        if d < tol:
            return UlamDensity(v.reshape(grid_size, grid_size))
    rate = diffs[-1] / diffs[-2] if len(diffs) > 1 and diffs[-2] > 0 else float("nan")
    raise NonConvergence(f"power iteration stalled after {max_iter} steps; last L1 step {diffs[-1]:.3e}, "
                         f"contraction ratio {rate:.6f} (spectral gap estimate {1 - rate:.3e})")


def sample_from_density(density: UlamDensity, n_particles: int, seed: int) -> ParticleEnsemble:
    """i.i.d. samples: pick a cell by mass, then a uniform point inside it."""
    n = int(n_particles)
    if n < 1:
        raise ValueError("n_particles must be >= 1")
    gen = np.random.Generator(np.random.Philox(seed))
    m = density.m
    flat = density.cells.ravel()
    cdf = np.cumsum(flat)
    cdf /= cdf[-1]
    k = np.searchsorted(cdf, gen.random(n), side="right")
    k = np.minimum(k, flat.size - 1)
    ci, cj = np.divmod(k, m)
    pts = (np.stack([ci, cj], axis=1) + gen.random((n, 2))) / m
    return ParticleEnsemble.uniform_weights(wrap(pts), {"kind": "sampled", "seed": seed, "grid": m})


def uniform_ensemble(n_particles: int, seed: int) -> ParticleEnsemble:
    gen = np.random.Generator(np.random.Philox(seed))
    return ParticleEnsemble.uniform_weights(gen.random((int(n_particles), 2)),
                                            {"kind": "lebesgue", "seed": seed})


def pullback_points(family: MapFamily, path: NoisePath, points, n: int, workers: int = 1,
                    block: int = 1 << 18):
    """Apply ``f_{omega_{-n+1}}, ..., f_{omega_0}`` to an array of points."""
    ws = path.values(-n + 1, 1)

    def run(chunk):
        q = chunk.copy()
        for w in ws:
            q = family.eval(w, q)
        return q

    pts = np.asarray(points, dtype=float)
    chunks = [pts[i:i + block] for i in range(0, len(pts), block)] or [pts]
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(run, chunks))
    else:
        out = [run(c) for c in chunks]
    return np.concatenate(out, axis=0)


def pullback_pushforward(family: MapFamily, path: NoisePath, ensemble: ParticleEnsemble, n: int,
                         workers: int = 1) -> ParticleEnsemble:
    """``(f^n_{theta^{-n} omega})_*`` applied particle by particle; weights unchanged."""
    n = int(n)
    if n < 0:
        raise ValueError("n must be nonnegative")
    if n == 0:
        return ensemble
    pts = pullback_points(family, path, ensemble.points, n, workers)
    prov = {"kind": "pushed", "n": n, "seed": path.seed, "source": ensemble.provenance}
    return ParticleEnsemble(pts, ensemble.weights, prov, ensemble.mass)


def ulam_projection(ensemble: ParticleEnsemble, m: int) -> UlamDensity:
    idx = cell_index(ensemble.points, m)
    counts = np.zeros(m * m)
    np.add.at(counts, idx[:, 0] * m + idx[:, 1], ensemble.weights)
    return UlamDensity.from_counts(counts.reshape(m, m))


def uniformity_zscore(ensemble: ParticleEnsemble, m: int) -> float:
    """Largest binomial z-score of cell counts against the uniform law (equal weights assumed)."""
    n = len(ensemble)
    counts = ulam_projection(ensemble, m).cells * n
    p = 1.0 / m ** 2
    return float(np.max(np.abs(counts - n * p)) / np.sqrt(n * p * (1 - p)))


# ---------------------------------------------------------------- weak distance

def fourier_bank(n_functions: int = 64):
    """Wave vectors of the test bank: the 32 shortest in a half-plane, each with cos and sin."""
    ks = [(a, b) for a in range(-6, 7) for b in range(-6, 7)
          if (a > 0) or (a == 0 and b > 0)]
    ks.sort(key=lambda k: (k[0] ** 2 + k[1] ** 2, k[0], k[1]))
    return np.array(ks[: n_functions // 2], dtype=float)


_BANK = fourier_bank()


def fourier_moments(ensemble: ParticleEnsemble, block: int = 1 << 17) -> np.ndarray:
    """Integrals of the 64 bank functions against the normalised ensemble."""
    acc = np.zeros(2 * len(_BANK))
    pts, w = ensemble.points, ensemble.weights
    for i in range(0, len(pts), block):
        ph = 2 * np.pi * pts[i:i + block] @ _BANK.T
        acc[: len(_BANK)] += w[i:i + block] @ np.cos(ph)
        acc[len(_BANK):] += w[i:i + block] @ np.sin(ph)
    return acc


def weak_distance(e1: ParticleEnsemble, e2: ParticleEnsemble) -> float:
    """Mean absolute difference of the 64 low-frequency Fourier moments."""
    if e1 is e2:
        return 0.0
    return float(np.mean(np.abs(fourier_moments(e1) - fourier_moments(e2))))


# ---------------------------------------------------------------- persistence

def save_ensemble(base: str | Path, ensemble: ParticleEnsemble, meta: dict | None = None):
    """Write ``<base>.bin`` (little-endian float64 columns x, y, weight) and ``<base>.json``."""
    base = Path(base)
    n = len(ensemble)
    cols = np.empty((3, n), dtype="<f8")
    cols[0], cols[1], cols[2] = ensemble.points[:, 0], ensemble.points[:, 1], ensemble.weights
    base.with_suffix(".bin").write_bytes(cols.tobytes())
    side = {"n": n, "columns": ["x", "y", "weight"], "dtype": "<f8", "layout": "columnar",
            "mass": ensemble.mass, "provenance": ensemble.provenance}
    side.update(meta or {})
    base.with_suffix(".json").write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    return [base.with_suffix(".bin"), base.with_suffix(".json")]


def load_ensemble(base: str | Path) -> ParticleEnsemble:
    base = Path(base)
    side = json.loads(base.with_suffix(".json").read_text())
    n = side["n"]
    cols = np.frombuffer(base.with_suffix(".bin").read_bytes(), dtype="<f8").reshape(3, n)
    return ParticleEnsemble(np.column_stack([cols[0], cols[1]]), cols[2].copy(),
                            side.get("provenance", {}), side.get("mass", 1.0))


def save_density_csv(path: str | Path, density: UlamDensity):
    np.savetxt(path, density.cells, delimiter=",", fmt="%.17g")
    return Path(path)


def load_density_csv(path: str | Path) -> UlamDensity:
    return UlamDensity(np.loadtxt(path, delimiter=",", ndmin=2))
