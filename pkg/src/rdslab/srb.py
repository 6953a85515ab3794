"""The SRB experiment.

A stationary sample is pushed from time ``-n`` to 0 along a frozen noise
past.  Mass coming from a small source ball and landing in a target box is
organised into stacks of pushed-forward leaves, the transverse direction is
cut into nested intervals, and the conditional distributions along leaves
are compared with Lebesgue measure and with densities predicted from
unstable Jacobians.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .cocycle import forward_orbit
from .errors import (InsufficientMass, MassStarvation, NoAccumulation, NumericalFailure,
                     SeparationFailure, StackRejected)
from .manifolds import (LeafStack, SwitchBudget, TransformSchedule, UGraph, build_u_stack,
                        euclid_lip, iterate_slanted_transform, reference_frame, sup_distance,
                        switch_axes, _frames_along)
from .noise import NoisePath
from .systems import MapFamily, torus_delta, wrap
from .tangent import ChartFrame, ChartParams, euclidean_frame, l_values, lyapunov_qr, orbit_frames
from .transport import (ParticleEnsemble, UlamDensity, pullback_points, sample_from_density,
                        ulam_projection)

GENERIC_VECTOR = (1.0, 0.37)


def derive_seed(*keys) -> int:
    """A 64-bit seed determined by a tuple of integers and strings."""
    ints = []
    for k in keys:
        if isinstance(k, str):
            ints.extend(k.encode())
        else:
            ints.append(int(k) & (2 ** 63 - 1))
    return int(np.random.SeedSequence(ints).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class ExperimentConfig:
    """Constants of the SRB experiment.

    ``l0`` and ``alpha0`` default to data-driven values: ``l0`` is the
    ``1 - beta0/3`` quantile of the size function over a Lebesgue sample and
    ``alpha0 = beta0`` (the torus has unit area).
    """

    beta0: float = 0.1
    l0: float | None = None
    eps_star: float = 0.04
    r_star: float = 0.08
    c_frak: float = 2.0
    depths: tuple = (30, 40, 50)
    alpha0: float | None = None
    particles: int = 1_000_000
    seed: int = 0
    selection_particles: int = 200_000
    n_lines: int = 512
    stack_leaves: int = 24
    leaf_radius: float | None = None
    u_past: int = 30
    partition_levels: int = 5
    density_levels: tuple = (3, 4, 5)
    cube_levels: int = 2
    band_level: int = 3
    min_cell_count: int = 1000
    n_dir: int = 20
    min_retained: int = 3

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(n) for n in self.depths))
        object.__setattr__(self, "density_levels", tuple(int(m) for m in self.density_levels))
        if not 0 < self.beta0 < 1:
            raise ValueError("beta0 must lie in (0, 1)")
        if self.c_frak <= 1:
            raise ValueError("c_frak must exceed 1")
        if (self.c_frak + 1) * self.beta0 >= 1:
            raise ValueError("(c_frak + 1) * beta0 must be below 1")
        if not self.depths:
            raise ValueError("at least one depth is required")
        if any(n < 1 for n in self.depths) or list(self.depths) != sorted(set(self.depths)):
            raise ValueError("depths must be strictly increasing positive integers")
        if self.eps_star <= 0 or self.r_star <= 0:
            raise ValueError("eps_star and r_star must be positive")
        if self.eps_star > 0.5 or abs(round(1 / self.eps_star) * self.eps_star - 1) > 1e-9:
            raise ValueError("1/eps_star must be an integer (the ball cover is a grid)")
        if self.l0 is not None and self.l0 < 1:
            raise ValueError("l0 must be at least 1")
        if self.alpha0 is not None and self.alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if max(self.density_levels, default=1) > self.partition_levels:
            raise ValueError("density_levels exceed partition_levels")
        if not 1 <= self.band_level <= self.partition_levels:
            raise ValueError("band_level must be a partition level")

    @property
    def alpha(self) -> float:
        return self.alpha0 if self.alpha0 is not None else self.beta0

    @property
    def R(self) -> float:
        """Working radius of leaves before they are re-graphed over the box."""
        return self.leaf_radius if self.leaf_radius is not None else 2.2 * self.r_star

    @property
    def window(self) -> float:
        """Transverse half-width of the stacks (leaves through the target ball)."""
        return min(self.eps_star, self.r_star / 2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depths"] = list(self.depths)
        d["density_levels"] = list(self.density_levels)
        d["alpha0_resolved"] = self.alpha
        d["leaf_radius_resolved"] = self.R
        return d


def resolve_l0(family: MapFamily, path: NoisePath, params: ChartParams, config: ExperimentConfig,
               n_probe: int = 4000) -> float:
    """Uniformity threshold: configured value or a quantile of ``l`` over a Lebesgue sample."""
    if config.l0 is not None:
        return float(config.l0)
    gen = np.random.Generator(np.random.Philox(derive_seed(config.seed, "l0")))
    pts = gen.random((n_probe, 2))
    lv = l_values(family, path, pts, params, [0], config.n_dir, config.n_dir)[0]
    return float(np.quantile(lv, 1 - config.beta0 / 3) * (1 + 1e-12))


# ---------------------------------------------------------------- uniformity sets

def qualify_uniform(family: MapFamily, path: NoisePath, points, l0: float, n: int,
                    params: ChartParams, n_dir: int = 20, block: int = 20000) -> np.ndarray:
    """Particles at time ``-n`` whose size function is at most ``l0`` at times ``-n`` and 0."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    lv = l_values(family, path.shift(-int(n)), pts, params, [0, int(n)], n_dir, n_dir, block)
    return (lv[0] <= l0) & (lv[1] <= l0)


def hausdorff_excess(a, b) -> float:
    """``sup_{x in a} d(x, b)`` for point sets on the torus."""
    a = wrap(np.atleast_2d(np.asarray(a, dtype=float)))
    b = wrap(np.atleast_2d(np.asarray(b, dtype=float)))
    if len(a) == 0:
        return 0.0
    if len(b) == 0:
        return float("inf")
    d, _ = cKDTree(b, boxsize=1.0).query(a)
    return float(np.max(d))


def uniformity_set_excess(family: MapFamily, path: NoisePath, stationary: UlamDensity,
                          depths, l0: float, params: ChartParams, n_particles: int = 5000,
                          lag: int = 20, seed: int = 0, n_dir: int = 20) -> dict:
    """Hausdorff excess of the time-0 qualified set at depth n over the one at depth n+lag."""
    out = {}
    cache = {}

    def qualified_set(n):
        if n not in cache:
            x = sample_from_density(stationary, n_particles, derive_seed(seed, "uset", n)).points
            q = qualify_uniform(family, path, x, l0, n, params, n_dir)
            cache[n] = pullback_points(family, path, x[q], n)
        return cache[n]

    for n in depths:
        out[int(n)] = hausdorff_excess(qualified_set(int(n)), qualified_set(int(n) + lag))
    return out


# ---------------------------------------------------------------- source and target

@dataclass
class SourceTarget:
    """Selected source and target balls and the witnessed mass constant."""

    p_minus: np.ndarray
    p_hat: np.ndarray
    c_star: float
    depths: tuple
    c_bound: float
    masses: dict
    source_masses: dict
    qualified: dict
    eps_star: float
    x_star: np.ndarray
    n_sources: int
    n_targets: int
    psi_floor: float
    mu_cells: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"p_minus": self.p_minus.tolist(), "p_hat": self.p_hat.tolist(),
                "x_star": self.x_star.tolist(), "c_star": self.c_star, "c_bound": self.c_bound,
                "retained_depths": list(self.depths),
                "masses": {str(k): v for k, v in self.masses.items()},
                "source_masses": {str(k): v for k, v in self.source_masses.items()},
                "qualified_fraction": {str(k): v for k, v in self.qualified.items()},
                "eps_star": self.eps_star, "n_sources": self.n_sources,
                "n_targets": self.n_targets, "psi_min_on_2eps_ball": self.psi_floor}


def _ball_min_density(stationary: UlamDensity, centers, radius):
    """Minimum of the cellwise density over sup-metric balls around ``centers``."""
    m = stationary.m
    q = int(math.ceil(2 * radius * m)) + 2
    off = np.linspace(-radius, radius, q) * (1 - 1e-9)
    ox, oy = np.meshgrid(off, off, indexing="ij")
    offs = np.stack([ox.ravel(), oy.ravel()], axis=1)
    vals = stationary.at(wrap(centers[:, None, :] + offs[None, :, :]))
    return vals.min(axis=1)


def _ball_masses(src, dst, weights, K):
    """Masses of all (source ball, target ball) pairs of the ``1/K`` grid cover.

    Ball ``j`` (centre ``j/K``, sup radius ``1/K``) contains grid cells ``j-1``
    and ``j`` in each coordinate.
    """
    a = np.floor(src * K).astype(np.int64) % K
    b = np.floor(dst * K).astype(np.int64) % K
    flat = ((a[:, 0] * K + a[:, 1]) * K + b[:, 0]) * K + b[:, 1]
    H = np.bincount(flat, weights=weights, minlength=K ** 4).reshape(K, K, K, K)
    for ax in range(4):
        H = H + np.roll(H, 1, axis=ax)
    return H


def find_source_target(family: MapFamily, path: NoisePath, stationary: UlamDensity,
                       config: ExperimentConfig, params: ChartParams, l0: float,
                       workers: int = 1) -> SourceTarget:
    """Search the ball cover for a (source, target) pair carrying mass at the depths.

    ``c_bound`` is the pigeonhole constant ``(1 - (c+1) beta0) / (J J')``; the
    retained depths are those at which the chosen pair carries at least that
    much qualified mass, and ``c_star`` is the smallest measured pair mass
    over the retained depths.
    """
    eps = config.eps_star
    K = int(round(1 / eps))
    grid = np.arange(K) / K
    gx, gy = np.meshgrid(grid, grid, indexing="ij")
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
    alpha = config.alpha
    psi_c = stationary.at(centers)
    psi_2 = _ball_min_density(stationary, centers, 2 * eps)
    eligible = ((psi_c >= alpha) & (psi_2 >= alpha / 2)).reshape(K, K)
    J = int(eligible.sum())
    if J == 0:
        raise NoAccumulation("no source ball satisfies the density floor")
    c_bound = (1 - (config.c_frak + 1) * config.beta0) / (J * K * K)

    N = int(config.selection_particles)
    masses, src_mass, qual, mu_cells, samples = [], [], {}, {}, {}
    for n in config.depths:
        x = sample_from_density(stationary, N, derive_seed(config.seed, "select", n)).points
        y = pullback_points(family, path, x, n, workers)
        q = qualify_uniform(family, path, x, l0, n, params, config.n_dir)
        w = np.where(q, 1.0 / N, 0.0)
        M = _ball_masses(x, y, w, K)
        M[~eligible] = -np.inf
        masses.append(M)
        src_mass.append(M.sum(axis=(2, 3)) / 4)   # each point lies in four target balls
        qual[n] = float(q.mean())
        mu_cells[n] = ulam_projection(ParticleEnsemble.uniform_weights(y), 16).cells
        samples[n] = (y, q)
    masses = np.stack(masses)
    passes = masses >= c_bound
    npass = passes.sum(axis=0)
    best_n = int(npass.max())
    need = min(config.min_retained, len(config.depths))
    if best_n < need:
        raise NoAccumulation(f"best pair passes {best_n} of {len(config.depths)} depths "
                             f"(need {need}); increase depths or relax beta0")
    score = np.where(npass == best_n, masses.min(axis=0), -np.inf)
    i, j, k, l = np.unravel_index(int(np.argmax(score)), score.shape)
    keep = [d for d, n in enumerate(config.depths) if passes[d, i, j, k, l]]
    retained = tuple(config.depths[d] for d in keep)
    pair = {config.depths[d]: float(masses[d, i, j, k, l]) for d in range(len(config.depths))}
    smass = {config.depths[d]: float(src_mass[d][i, j]) for d in range(len(config.depths))}
    p_minus = np.array([i / K, j / K])
    p_hat = np.array([k / K, l / K])

    # reference point: a qualified time-0 particle of the last depth, nearest p_hat
    y, q = samples[retained[-1]]
    d = np.max(np.abs(torus_delta(y[q], p_hat)), axis=-1)
    x_star = y[q][int(np.argmin(d))] if d.size and d.min() < eps else p_hat.copy()
    return SourceTarget(p_minus=p_minus, p_hat=p_hat, c_star=min(pair[n] for n in retained),
                        depths=retained, c_bound=float(c_bound), masses=pair, source_masses=smass,
                        qualified=qual, eps_star=eps, x_star=np.asarray(x_star, dtype=float),
                        n_sources=J, n_targets=K * K, psi_floor=float(psi_2[i * K + j]),
                        mu_cells=mu_cells)


def landed_fraction(family: MapFamily, path: NoisePath, p_minus, p_hat, eps: float, n: int,
                    n_particles: int = 200_000, seed: int = 0) -> float:
    """Fraction of Lebesgue mass of ``B(p_minus, eps)`` landing in ``B(p_hat, eps)`` after n steps."""
    gen = np.random.Generator(np.random.Philox(derive_seed(seed, "landed", n)))
    x = wrap(np.asarray(p_minus) + (2 * gen.random((int(n_particles), 2)) - 1) * eps)
    y = pullback_points(family, path, x, n)
    return float(np.mean(np.max(np.abs(torus_delta(y, np.asarray(p_hat))), axis=-1) < eps))


@dataclass
class SeedScreen:
    """Outcome of the good-noise screen."""

    seeds: list
    fractions: dict
    passed: dict
    retained_fraction: float
    bound: float

    def to_dict(self) -> dict:
        return {"seeds": self.seeds, "qualified_fractions": {str(k): v for k, v in self.fractions.items()},
                "passed": {str(k): v for k, v in self.passed.items()},
                "retained_fraction": self.retained_fraction, "bound": self.bound}


def screen_noise_seeds(family: MapFamily, law, stationary: UlamDensity, config: ExperimentConfig,
                       params: ChartParams, l0: float, n_wanted: int = 4,
                       n_particles: int = 20000) -> SeedScreen:
    """Sample ``c/(c-1)``-inflated many noise seeds and keep those passing the mass test.

    A seed passes when the qualified fraction is at least ``1 - c beta0`` at
    ``min_retained`` or more of the configured depths.
    """
    c = config.c_frak
    n_seeds = int(math.ceil(n_wanted * c / (c - 1)))
    need = min(config.min_retained, len(config.depths))
    seeds, fracs, passed = [], {}, {}
    for s in range(n_seeds):
        seed = derive_seed(config.seed, "screen", s)
        path = NoisePath(seed, law)
        fr = []
        for n in config.depths:
            x = sample_from_density(stationary, n_particles, derive_seed(seed, "mass", n)).points
            fr.append(float(qualify_uniform(family, path, x, l0, n, params, config.n_dir).mean()))
        seeds.append(seed)
        fracs[seed] = fr
        passed[seed] = sum(f >= 1 - c * config.beta0 for f in fr) >= need
    kept = sum(passed.values()) / n_seeds
    return SeedScreen(seeds, fracs, passed, kept, (c - 1) / c)


# ---------------------------------------------------------------- source foliation

def source_slope_bound(proj_norms) -> float:
    """Slope cap for source leaves from the worst projection norm.

    A leaf separated from ``E^cs`` by at least half the angle between
    ``E^u`` and ``E^cs`` has slope at most ``1/sin(angle/2)``.
    """
    P = max(1.0, float(np.max(proj_norms)))
    return 1.0 / math.sin(0.5 * math.asin(1.0 / P))


def _chord(center_offset_normal, d, nu, eps):
    """Parameter interval of ``t nu + s d`` inside the open square ``|z|_inf < eps``."""
    t = np.asarray(center_offset_normal, dtype=float)
    lo = np.full(t.shape, -np.inf)
    hi = np.full(t.shape, np.inf)
    for i in range(2):
        if abs(d[i]) < 1e-300:
            bad = np.abs(t * nu[i]) >= eps
            lo[bad], hi[bad] = 0.0, 0.0
            continue
        a = (-eps - t * nu[i]) / d[i]
        b = (eps - t * nu[i]) / d[i]
        lo = np.maximum(lo, np.minimum(a, b))
        hi = np.minimum(hi, np.maximum(a, b))
    return lo, np.maximum(hi, lo)


@dataclass(frozen=True, eq=False)
class SourceFoliation:
    """Parallel lines through the source ball, all in the direction ``direction``."""

    center: np.ndarray
    direction: np.ndarray
    normal: np.ndarray
    eps: float
    offsets: np.ndarray
    s_lo: np.ndarray
    s_hi: np.ndarray
    spacing: float
    r_minus: float
    K_minus: float

    @property
    def n_lines(self):
        return len(self.offsets)

    @property
    def chords(self):
        return self.s_hi - self.s_lo

    def leb_mass(self) -> float:
        return float(self.chords.sum() * self.spacing)

    def line_points(self, line, s):
        return wrap(self.center + self.offsets[line, None] * self.normal + np.asarray(s)[..., None]
                    * self.direction)

    def sample(self, n_particles: int, seed: int, alpha0: float):
        """``(alpha0/2) Leb`` on the ball, disintegrated on the lines and sampled uniformly.

        Returns the ensemble and the line index of each particle.
        """
        ch = self.chords
        share = ch / ch.sum() * int(n_particles)
        cnt = np.floor(share).astype(np.int64)
        rest = int(n_particles) - int(cnt.sum())
        if rest > 0:
            cnt[np.argsort(-(share - cnt), kind="stable")[:rest]] += 1
        gen = np.random.Generator(np.random.Philox(seed))
        line = np.repeat(np.arange(self.n_lines), cnt)
        s = self.s_lo[line] + gen.random(len(line)) * ch[line]
        pts = self.line_points(line, s)
        line_mass = 0.5 * alpha0 * ch * self.spacing
        w = line_mass[line] / cnt[line]
        total = float(line_mass[cnt > 0].sum())
        ens = ParticleEnsemble(pts, w / w.sum(), {"kind": "source", "seed": seed,
                                                  "n_lines": self.n_lines}, total)
        return ens, line

    def graph_at(self, frame: ChartFrame, radius: float | None = None) -> UGraph:
        """The leaf through ``frame.base`` as a graph over the frame's u-axis."""
        w = frame.L_inv @ self.direction
        if abs(w[0]) < 1e-12:
            raise SeparationFailure("source leaf is parallel to E^cs")
        slope = float(w[1] / w[0])
        if abs(slope) >= self.K_minus:
            raise SeparationFailure(f"leaf slope {abs(slope):.3g} >= K_minus = {self.K_minus:.3g}; "
                                    "shrink eps_star")
        r = self.r_minus if radius is None else min(radius, self.r_minus)
        r = r / math.sqrt(1 + slope * slope) / np.linalg.norm(frame.L[:, 0])
        return UGraph.line(frame, r, slope, cs_radius=float("inf"))


def disintegrate_source(frame_at_source: ChartFrame, eps_star: float, r_minus: float | None,
                        K_minus: float, n_lines: int) -> SourceFoliation:
    """Foliate ``B(p_-, eps_star)`` by lines parallel to the frame's ``E^u`` axis.

    ``r_minus`` bounds the length of each per-point leaf piece so that it
    stays in ``B(p_-, 2 eps_star)``; it defaults to ``eps_star``.
    """
    if n_lines < 1:
        raise ValueError("n_lines must be >= 1")
    d = np.asarray(frame_at_source.e_u, dtype=float)
    d = d / np.linalg.norm(d)
    nu = np.array([-d[1], d[0]])
    T = eps_star * (abs(nu[0]) + abs(nu[1]))
    if n_lines == 1:
        offsets, spacing = np.zeros(1), 2 * T
    else:
        spacing = 2 * T / n_lines
        offsets = -T + (np.arange(n_lines) + 0.5) * spacing
    lo, hi = _chord(offsets, d, nu, eps_star)
    r_minus = eps_star if r_minus is None else float(r_minus)
    return SourceFoliation(center=np.asarray(frame_at_source.base, dtype=float), direction=d,
                           normal=nu, eps=float(eps_star), offsets=offsets, s_lo=lo, s_hi=hi,
                           spacing=float(spacing), r_minus=r_minus, K_minus=float(K_minus))


def source_frame(family: MapFamily, path: NoisePath, p_minus, n: int, params: ChartParams,
                 radius: float, n_dir: int = 20) -> ChartFrame:
    """Euclidean frame at ``p_minus`` at time ``-n``."""
    of = orbit_frames(family, path.shift(-int(n)), np.asarray(p_minus, dtype=float), 0, 0, params,
                      n_dir, n_dir)
    return euclidean_frame(of.points[0], of.e_u[0], of.e_cs[0], radius, time=-int(n))


# ---------------------------------------------------------------- stacks

def slanted_schedule(K_minus: float, r_minus: float, R: float, params: ChartParams) -> TransformSchedule:
    """Schedule whose initial Euclidean domain is ``r_minus`` and final one is ``R``."""
    r0 = params.r1_bar * min(r_minus, R) / R
    return TransformSchedule.from_constants(max(K_minus, 1e-12), params.lam, r0, params.r1_bar,
                                            params.K0_bar)


def stack_budget(reference: ChartFrame, r_star: float) -> SwitchBudget:
    """Switch tolerances for leaves whose base points lie anywhere in the box."""
    return SwitchBudget(L=max(2.0, 2 * reference.proj_norm), eps1=1.5 * r_star)


def build_wn_stack(family: MapFamily, path: NoisePath, foliation: SourceFoliation,
                   schedule: TransformSchedule, n: int, reference: ChartFrame, r_star: float,
                   start_points, params: ChartParams, leaf_radius: float,
                   budget: SwitchBudget | None = None, n_dir: int = 20) -> LeafStack:
    """Push source leaves through ``start_points`` (time ``-n``) forward and stack them.

    ``start_points`` maps a leaf id to a point of the source ball at time
    ``-n``.  Each leaf piece is transformed in Euclidean frames of radius
    ``leaf_radius`` and re-graphed over the reference box.
    """
    budget = budget or stack_budget(reference, r_star)
    shifted = path.shift(-int(n))
    stack = LeafStack(reference=reference, r_star=r_star, kind="Wn", depth=int(n))
    pts = start_points.items() if isinstance(start_points, dict) else enumerate(start_points)
    total = 0
    for key, x in pts:
        total += 1
        try:
            fl = _frames_along(family, shifted, np.asarray(x, dtype=float), 0, n, params,
                               "euclidean", leaf_radius, n_dir, n_dir)
            g0 = foliation.graph_at(fl[0])
            gs = iterate_slanted_transform(family, path, x, schedule, g0, n, params,
                                           frames="euclidean", working_radius=leaf_radius,
                                           frame_list=fl)
            g = gs[-1]
            if not g.meta.get("full_domain", False):
                raise NumericalFailure(f"leaf domain {g.radius:.3e} short of {leaf_radius:.3e}")
            gamma = switch_axes(g, reference, r_star, check=True, budget=budget)
        except NumericalFailure as exc:
            stack.rejections[key] = f"{type(exc).__name__}: {exc}"
            continue
        if gamma.lip > 1.0:
            stack.rejections[key] = f"Lip {gamma.lip:.3g} > 1 over the box"
            continue
        stack.leaves[key] = gamma
        stack.diagnostics[key] = {"slope0": float(g.slope_at_origin()), "lip": float(g.lip),
                                  "dlip": float(g.dlip), "euclid_lip": float(euclid_lip(g)),
                                  "slope_in": float(g0.slope0), "box_lip": float(gamma.lip),
                                  "start": np.asarray(x, dtype=float).tolist(),
                                  "end": g.frame.base.tolist()}
    if total and 2 * len(stack.leaves) < total:
        raise StackRejected(f"{len(stack.leaves)} of {total} leaves survived at depth {n}: "
                            + "; ".join(f"{k}: {v}" for k, v in list(stack.rejections.items())[:3]))
    return stack


def leaf_distances(wn_stack: LeafStack, u_stack: LeafStack) -> dict:
    """Sup distance between leaves with the same id in the two stacks."""
    common = [k for k in wn_stack.leaves if k in u_stack.leaves]
    return {k: sup_distance(wn_stack.leaves[k], u_stack.leaves[k]) for k in common}


def transverse_coordinates(stack: LeafStack, s, t, tol: float = 1e-12):
    """Transverse coordinate of box points ``(s, t)`` by interpolation between stack leaves.

    The coordinate of a leaf is its height at ``s = 0``.  Points outside the
    outermost leaves get ``nan``.
    """
    keys, tau = stack.ordered()
    if len(keys) < 2:
        raise ValueError("need at least two leaves")
    keep = np.concatenate([[True], np.diff(tau) > tol])
    keys = [k for k, m in zip(keys, keep) if m]
    tau = tau[keep]
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    G = np.stack([stack.leaves[k](s) for k in keys])
    below = np.sum(G <= t, axis=0) - 1
    valid = (below >= 0) & (below < len(keys) - 1)
    k = np.clip(below, 0, len(keys) - 2)
    cols = np.arange(len(s))
    lo, hi = G[k, cols], G[k + 1, cols]
    gap = np.where(hi > lo, hi - lo, np.inf)
    out = tau[k] + (t - lo) / gap * (tau[k + 1] - tau[k])
    out[~valid] = np.nan
    return out


# ---------------------------------------------------------------- nested partitions

def retained_targets(levels: int):
    """``c_1 = 1`` and ``c_m = 2^{-2^{-(m-1)}}``, so the product over all levels exceeds 1/2."""
    return [1.0] + [2.0 ** -(2.0 ** -(m - 1)) for m in range(2, levels + 1)]


@dataclass
class NestedPartition:
    """Nested transverse intervals.

    ``cells[m-1]`` is an array of rows ``(lo, hi, enl_lo, enl_hi, parent)``;
    ``[lo, hi]`` is the compact cell and ``(enl_lo, enl_hi)`` its open
    enlargement.
    """

    interval: tuple
    cells: list
    targets: list
    retained: list
    eta: list

    @property
    def levels(self):
        return len(self.cells)

    def assign(self, m: int, tau, enlarged: bool = False) -> np.ndarray:
        """Cell index of each coordinate at level ``m`` (-1 outside every cell)."""
        c = self.cells[m - 1]
        tau = np.asarray(tau, dtype=float)
        lo, hi = (c[:, 2], c[:, 3]) if enlarged else (c[:, 0], c[:, 1])
        k = np.searchsorted(lo, tau, side="right") - 1
        ok = k >= 0
        kk = np.clip(k, 0, len(c) - 1)
        inside = ok & ((tau < hi[kk]) if enlarged else (tau <= hi[kk]))
        if enlarged:
            inside &= tau > lo[kk]
        return np.where(inside & ~np.isnan(tau), kk, -1)

    def to_rows(self):
        rows = []
        for m, c in enumerate(self.cells, start=1):
            for k, (lo, hi, elo, ehi, par) in enumerate(c):
                rows.append({"level": m, "cell": k, "lo": lo, "hi": hi, "enl_lo": elo,
                             "enl_hi": ehi, "parent": int(par)})
        return rows


def build_nested_partition(u_stack: LeafStack | None, tau, weights, levels: int,
                           interval=None, jitter: float = 1e-9) -> NestedPartition:
    """Refine ``interval`` dyadically ``levels - 1`` times, removing a gap at each cut.

    The gap around each (jittered) midpoint is as wide as a quarter of the
    cell allows while the children keep at least ``c_m`` of the parent's
    mass.  Enlargements extend each child by half the gap on the cut side.
    """
    tau = np.asarray(tau, dtype=float)
    w = np.asarray(weights, dtype=float)
    ok = ~np.isnan(tau)
    tau, w = tau[ok], w[ok]
    if interval is None:
        if u_stack is None:
            raise ValueError("interval or stack required")
        _, tr = u_stack.ordered()
        interval = (float(tr.min()), float(tr.max()))
    a, b = map(float, interval)
    order = np.argsort(tau, kind="stable")
    tau, w = tau[order], w[order]
    cw = np.concatenate([[0.0], np.cumsum(w)])

    def mass(lo, hi):
        i = np.searchsorted(tau, lo, side="left")
        j = np.searchsorted(tau, hi, side="right")
        return cw[j] - cw[i]

    targets = retained_targets(levels)
    total = mass(a, b)
    cells = [np.array([[a, b, a, b, -1]], dtype=float)]
    retained, etas = [1.0], [0.0]
    for m in range(2, levels + 1):
        cm = targets[m - 1]
        rows, eta_m = [], []
        for p, (lo, hi, elo, ehi, _) in enumerate(cells[-1]):
            mid = 0.5 * (lo + hi) + jitter * (hi - lo)
            pm = mass(lo, hi)
            cap = (hi - lo) / 8
            allow = (1 - cm) * pm
            eta = cap
            if pm > 0 and mass(mid - cap, mid + cap) > allow:
                i0 = np.searchsorted(tau, lo, side="left")
                i1 = np.searchsorted(tau, hi, side="right")
                d = np.abs(tau[i0:i1] - mid)
                o = np.argsort(d, kind="stable")
                acc = np.cumsum(w[i0:i1][o])
                j = int(np.searchsorted(acc, allow, side="right"))
                eta = float(d[o][j]) if j < len(d) else cap
                if eta <= 0:
                    raise MassStarvation(f"level {m}, cell {p}: an atom sits on the cut")
            eta_m.append(eta)
            rows.append([lo, mid - eta, elo, mid - eta / 2, p])
            rows.append([mid + eta, hi, mid + eta / 2, ehi, p])
        c = np.array(rows, dtype=float)
        kept = sum(mass(r[0], r[1]) for r in c)
        prev = sum(mass(r[0], r[1]) for r in cells[-1])
        if prev > 0 and kept < cm * prev * (1 - 1e-12):
            raise MassStarvation(f"level {m} keeps {kept / prev:.4f} < c_m = {cm:.4f}")
        cells.append(c)
        retained.append(kept / total if total > 0 else 0.0)
        etas.append(float(min(eta_m)))
    return NestedPartition(interval=(a, b), cells=cells, targets=targets, retained=retained,
                           eta=etas)


# ---------------------------------------------------------------- leaf densities

@dataclass(frozen=True, eq=False)
class LeafDensity:
    """Predicted density of the conditional measure along one leaf.

    ``rho`` is the density in the box coordinate ``s`` (integrating to one);
    ``log_rho_arc`` is the log density per unit arclength (up to a constant).
    """

    s: np.ndarray
    rho: np.ndarray
    cdf_nodes: np.ndarray
    log_rho_arc: np.ndarray
    points: np.ndarray
    depth: int = 0
    offset: float = 0.0

    def cdf(self, s):
        return np.interp(s, self.s, self.cdf_nodes)

    def distortion(self) -> float:
        return float(self.log_rho_arc.max() - self.log_rho_arc.min())

    def distortion_lip(self, n_sub: int = 65) -> float:
        idx = np.unique(np.linspace(0, len(self.s) - 1, n_sub).astype(int))
        lr = self.log_rho_arc[idx]
        p = self.points[idx]
        dl = np.abs(lr[:, None] - lr[None, :])
        dp = np.linalg.norm(torus_delta(p[:, None, :], p[None, :, :]), axis=-1)
        m = dp > 0
        return float(np.max(dl[m] / dp[m])) if m.any() else 0.0


def stable_truncation(lam: float, radius: float = 1.0) -> int:
    """Largest backward depth at which a leaf of size ``radius`` stays resolvable.

    At depth ``k`` the leaf has shrunk to about ``radius e^{-lam k}``; the
    segment launched there must keep many floating point steps per node,
    which holds up to about ``log(radius/eps)/(2 lam)``.
    """
    return max(1, int(math.log(radius / np.finfo(float).eps) / (2 * lam)))


def _push_with_vector(family, ws, x, v):
    """Push points ``x`` and unit vectors ``v`` through ``ws``; return end state and log stretch."""
    S = np.zeros(len(x))
    for w in ws:
        v = np.einsum("nij,nj->ni", family.jacobian(w, x), v)
        g = np.linalg.norm(v, axis=1)
        v = v / g[:, None]
        S += np.log(g)
        x = family.eval(w, x)
    return x, v, S


def predicted_leaf_density(family: MapFamily, path: NoisePath, leaf: UGraph, n_trunc: int,
                           n_points: int = 513, n_dir: int = 20,
                           n_segment: int = 4097) -> LeafDensity:
    """Density along ``leaf`` (at time 0) predicted from unstable Jacobians.

    The arclength density at ``p`` is ``prod_{k=1..n_trunc} 1/J^u(f^{-k} p)``.
    Backward orbits of leaf points are not computed by inversion (stable
    directions blow up any off-leaf error); instead a short segment along
    ``E^u`` at time ``-n_trunc`` is pushed forward onto the leaf, and each
    image point carries the inverse of its accumulated stretch.
    """
    fr = leaf.frame
    K = int(n_trunc)
    s = np.linspace(-leaf.radius, leaf.radius, n_points)
    p0 = fr.from_chart(np.column_stack([s, leaf(s)]))
    dl = np.linalg.norm(np.column_stack([np.ones_like(s), leaf.derivative(s)]) @ fr.L.T, axis=1)
    arc = np.concatenate([[0.0], np.cumsum(0.5 * (dl[1:] + dl[:-1]) * np.diff(s))])

    ws = path.values(-K - n_dir + 1, 1)           # omega_{-K-n_dir+1} .. omega_0
    back = [fr.from_chart(np.array([[0.0, float(leaf(0.0))]]))]
    for w in ws[::-1]:
        back.append(family.inverse(w, back[-1]))  # back[k] = x_{-k}
    # e_u at x_{-K}: push the generic vector along the computed past
    e_u = np.array([GENERIC_VECTOR]) / np.hypot(*GENERIC_VECTOR)
    for j in range(K + n_dir, K, -1):
        e_u = family.jacobian(ws[K + n_dir - j], back[j])[0] @ e_u[0]
        e_u = (e_u / np.linalg.norm(e_u))[None, :]
    y = back[K]
    end, _, G = _push_with_vector(family, ws[n_dir:], y, e_u)
    s_mid = float(fr.to_chart(end)[0, 0])
    a_mid = float(np.interp(s_mid, s, arc))
    half = max(a_mid - arc[0], arc[-1] - a_mid)
    scale = 2.0 * half / math.exp(G[0])
    c = n_segment // 2
    for _ in range(6):
        sig = np.linspace(-scale, scale, n_segment)
        seg = wrap(y + sig[:, None] * e_u)
        img, _, S = _push_with_vector(family, ws[n_dir:], seg,
                                      np.broadcast_to(e_u, seg.shape).copy())
        z = fr.to_chart(img)
        if z[c + 1, 0] < z[c, 0]:
            z, S = z[::-1], S[::-1]
        # monotone run through the centre, inside a generous window
        ok = (np.diff(z[:, 0]) > 0) & (np.abs(z[1:, 0]) <= 2 * leaf.radius)
        lo = c
        while lo > 0 and ok[lo - 1]:
            lo -= 1
        hi = c
        while hi < n_segment - 1 and ok[hi]:
            hi += 1
        z, S = z[lo:hi + 1], S[lo:hi + 1]
        if z[0, 0] <= s[0] and z[-1, 0] >= s[-1]:
            break
        scale *= 2.0
    else:
        raise NumericalFailure("pushed segment does not cover the leaf")
    offset = float(np.max(np.abs(z[:, 1] - leaf(np.clip(z[:, 0], s[0], s[-1])))
                          * ((z[:, 0] >= s[0]) & (z[:, 0] <= s[-1]))))
    log_rho = np.interp(s, z[:, 0], -S)
    log_s = log_rho + np.log(dl)
    rho = np.exp(log_s - log_s.max())
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]) * np.diff(s))])
    return LeafDensity(s=s, rho=rho / cum[-1], cdf_nodes=cum / cum[-1], log_rho_arc=log_rho,
                       points=p0, depth=K, offset=offset)


# ---------------------------------------------------------------- density checks

@dataclass
class RestrictedSample:
    """Particles of the restricted measure in box coordinates.

    ``weights`` carry absolute mass (the source measure is ``(alpha0/2) Leb``).
    """

    s: np.ndarray
    t: np.ndarray
    tau: np.ndarray
    weights: np.ndarray
    depth: int

    def __len__(self):
        return len(self.s)


@dataclass
class DensityReport:
    depth: int
    rows: list
    A: float
    A_by_level: dict
    transverse_masses: dict
    insufficient: list
    distortion: dict
    ks: dict
    histograms: dict

    def summary(self) -> dict:
        return {"depth": self.depth, "A": self.A,
                "A_by_level": {str(k): v for k, v in self.A_by_level.items()},
                "insufficient": self.insufficient, "D_bar": self.distortion.get("D_bar"),
                "D_lip": self.distortion.get("D_lip"),
                "ks_max": max((v["ks"] for v in self.ks.values()), default=None),
                "ks": {str(k): v for k, v in self.ks.items()}}


def dyadic_cubes(r_star: float, level: int):
    """Dyadic subintervals of ``[-r_star, r_star]`` at ``level``."""
    e = np.linspace(-r_star, r_star, 2 ** level + 1)
    return e[:-1], e[1:]


def _ks_band(s, w, profiles, taus, tau_p):
    """Weighted KS distance between band particles and the mixture of nearest-leaf profiles."""
    o = np.argsort(s, kind="stable")
    s, w, tau_p = s[o], w[o], tau_p[o]
    nearest = np.argmin(np.abs(tau_p[:, None] - taus[None, :]), axis=1)
    mix = np.bincount(nearest, weights=w, minlength=len(taus)) / w.sum()
    pred = np.zeros_like(s)
    for k in np.flatnonzero(mix):
        pred += mix[k] * profiles[k].cdf(s)
    emp_hi = np.cumsum(w) / w.sum()
    emp_lo = emp_hi - w / w.sum()
    return float(max(np.max(np.abs(emp_hi - pred)), np.max(np.abs(emp_lo - pred)))), mix


def conditional_density_check(wn_stack: LeafStack, restricted: RestrictedSample,
                              partition: NestedPartition, cube_levels: int = 2, levels=None,
                              min_count: int = 1000, leaf_profiles: dict | None = None,
                              band_level: int | None = None, n_bins: int = 32) -> DensityReport:
    """Density-bound constant ``A`` over partition cells and dyadic u-cubes.

    For each enlarged cell ``beta`` and cube ``C`` the ratio
    ``nu(beta & C) / nu(beta)`` is compared with the normalised length of
    ``C``.  Cells with fewer than ``min_count`` particles are reported as
    insufficient and skipped.
    """
    r = wn_stack.r_star
    levels = list(levels or range(1, partition.levels + 1))
    s, tau, w = restricted.s, restricted.tau, restricted.weights
    rows, A_lvl, tmass, insufficient = [], {}, {}, []
    for m in levels:
        cell = partition.assign(m, tau, enlarged=True)
        A_m = 1.0
        ncell = len(partition.cells[m - 1])
        tmass[m] = np.bincount(cell[cell >= 0], weights=w[cell >= 0], minlength=ncell).tolist()
        for k in range(ncell):
            sel = cell == k
            cnt = int(sel.sum())
            if cnt < min_count:
                insufficient.append({"level": m, "cell": k, "count": cnt})
                continue
            sk, wk = s[sel], w[sel]
            tot = wk.sum()
            for j in range(cube_levels + 1):
                lo, hi = dyadic_cubes(r, j)
                idx = np.clip(np.searchsorted(hi, sk, side="left"), 0, len(hi) - 1)
                mass = np.bincount(idx, weights=wk, minlength=len(hi))
                leb = (hi - lo) / (2 * r)
                for c in range(len(hi)):
                    ratio = mass[c] / tot
                    a = np.inf if ratio == 0 else max(ratio / leb[c], leb[c] / ratio)
                    A_m = max(A_m, a)
                    rows.append({"depth": restricted.depth, "level": m, "cell": k, "cube_level": j,
                                 "cube": c, "ratio": float(ratio), "leb": float(leb[c]),
                                 "count": int(np.sum(idx == c)), "A": float(a)})
        A_lvl[m] = float(A_m)

    distortion, ks, hists = {}, {}, {}
    if leaf_profiles:
        per = {k: {"D": p.distortion(), "D_lip": p.distortion_lip()} for k, p in leaf_profiles.items()}
        distortion = {"D_bar": max(v["D"] for v in per.values()),
                      "D_lip": max(v["D_lip"] for v in per.values()), "per_leaf": per}
        if band_level is not None:
            keys = [k for k in leaf_profiles if k in wn_stack.leaves]
            taus = np.array([float(wn_stack.leaves[k](0.0)) for k in keys])
            profiles = [leaf_profiles[k] for k in keys]
            band = partition.assign(band_level, tau, enlarged=False)
            edges = np.linspace(-r, r, n_bins + 1)
            for b in range(len(partition.cells[band_level - 1])):
                sel = band == b
                if sel.sum() < 2:
                    continue
                d, mix = _ks_band(s[sel], w[sel], profiles, taus, tau[sel])
                ks[b] = {"ks": d, "count": int(sel.sum())}
                emp, _ = np.histogram(s[sel], bins=edges, weights=w[sel])
                cdf = sum(mix[k] * profiles[k].cdf(edges) for k in np.flatnonzero(mix))
                hists[b] = {"edges": edges.tolist(), "empirical": (emp / w[sel].sum()).tolist(),
                            "predicted": np.diff(cdf).tolist()}
    A = max(A_lvl.values()) if A_lvl else 1.0
    return DensityReport(depth=restricted.depth, rows=rows, A=float(A), A_by_level=A_lvl,
                         transverse_masses=tmass, insufficient=insufficient,
                         distortion=distortion, ks=ks, histograms=hists)


# ---------------------------------------------------------------- entropy

@dataclass(frozen=True)
class EntropyCheck:
    lambda1: float
    mean_log_unstable_jacobian: float
    n: int

    @property
    def gap(self) -> float:
        return abs(self.lambda1 - self.mean_log_unstable_jacobian)

    def to_dict(self) -> dict:
        return {"lambda1": self.lambda1, "mean_log_unstable_jacobian": self.mean_log_unstable_jacobian,
                "n": self.n, "gap": self.gap}


def entropy_consistency(family: MapFamily, path: NoisePath, p, n: int, n_dir: int = 40,
                        transient: int = 100) -> EntropyCheck:
    """Top exponent (QR) and the mean log unstable Jacobian along the same orbit.

    ``E^u`` at every orbit point is estimated independently by pushing the
    generic vector through the preceding ``n_dir`` Jacobians.
    """
    n = int(n)
    transient = max(int(transient), n_dir)
    rep = lyapunov_qr(family, path, np.asarray(p, dtype=float), n, transient=transient)
    orbit = forward_orbit(family, path, np.asarray(p, dtype=float), n + transient)
    jacs = family.jacobian(path.values(1, n + transient + 1), orbit[:-1])
    idx = np.arange(transient, transient + n)
    v = np.broadcast_to(np.array(GENERIC_VECTOR) / np.hypot(*GENERIC_VECTOR), (n, 2)).copy()
    for k in range(n_dir, 0, -1):
        v = np.einsum("nij,nj->ni", jacs[idx - k], v)
        v /= np.linalg.norm(v, axis=1)[:, None]
    g = np.linalg.norm(np.einsum("nij,nj->ni", jacs[idx], v), axis=1)
    return EntropyCheck(rep.lambda1, float(np.mean(np.log(g))), n)


# ---------------------------------------------------------------- the experiment

@dataclass
class DepthResult:
    depth: int
    wn_stack: LeafStack
    u_stack: LeafStack
    leaf_distance: dict
    restricted: RestrictedSample
    partition: NestedPartition
    report: DensityReport
    profiles: dict
    diagnostics: dict

    def summary(self) -> dict:
        d = self.report.summary()
        ld = list(self.leaf_distance.values())
        d.update(leaf_distance_mean=float(np.mean(ld)) if ld else None,
                 leaf_distance_max=float(np.max(ld)) if ld else None,
                 n_wn_leaves=len(self.wn_stack), n_u_leaves=len(self.u_stack),
                 wn_rejections=self.wn_stack.rejections, u_rejections=self.u_stack.rejections,
                 partition_retained=self.partition.retained, partition_eta=self.partition.eta,
                 restricted_particles=len(self.restricted), **self.diagnostics)
        return d


def _pick_representatives(s, t, targets, s_cap):
    """Index of the particle nearest each target height among those with ``|s| <= s_cap``."""
    cand = np.flatnonzero(np.abs(s) <= s_cap)
    if cand.size == 0:
        return []
    o = cand[np.argsort(t[cand], kind="stable")]
    pos = np.clip(np.searchsorted(t[o], targets), 0, len(o) - 1)
    prev = np.clip(pos - 1, 0, len(o) - 1)
    pick = np.where(np.abs(t[o][prev] - targets) < np.abs(t[o][pos] - targets), prev, pos)
    return list(dict.fromkeys(int(o[i]) for i in pick))


def run_depth(family: MapFamily, path: NoisePath, st: SourceTarget, reference: ChartFrame,
              n: int, config: ExperimentConfig, params: ChartParams, l0: float,
              workers: int = 1) -> DepthResult:
    """One depth of the experiment: source sample, stacks, partition and density report."""
    r, R, eps = config.r_star, config.R, config.eps_star
    sframe = source_frame(family, path, st.p_minus, n, params, R, config.n_dir)
    probe = wrap(st.p_minus + eps * np.array([[x, y] for x in (-1, 0, 1) for y in (-1, 0, 1)]) * 0.999)
    pn = orbit_frames(family, path.shift(-n), probe, 0, 0, params, config.n_dir, config.n_dir).proj[0]
    K_minus = source_slope_bound(np.append(pn, sframe.proj_norm))
    fol = disintegrate_source(sframe, eps, eps, K_minus, config.n_lines)
    ens, line = fol.sample(config.particles, derive_seed(config.seed, "source", n), config.alpha)
    x_end = pullback_points(family, path, ens.points, n, workers)
    z = reference.to_chart(x_end)
    s, t = z[:, 0], z[:, 1]
    in_box = (np.abs(s) <= r) & (np.abs(t) <= r)

    # representatives spread across the transverse window, just beyond it
    span = min(1.2 * config.window, 0.8 * r)
    targets = np.linspace(-span, span, config.stack_leaves)
    idx = _pick_representatives(np.where(in_box, s, np.inf), t, targets, r / 4)
    idx = np.array(idx, dtype=np.int64)
    qual = qualify_uniform(family, path, ens.points[idx], l0, n, params, config.n_dir) \
        if idx.size else np.zeros(0, bool)
    reps = {int(i): ens.points[i] for i, q in zip(idx, qual) if q}
    ends = {int(i): x_end[i] for i in reps}

    schedule = slanted_schedule(K_minus, eps, R, params)
    budget = stack_budget(reference, r)
    wn = build_wn_stack(family, path, fol, schedule, n, reference, r, reps, params, R, budget,
                        config.n_dir)
    us = build_u_stack(family, path, ends, reference.base, r, config.u_past, params,
                       leaf_radius=R, budget=budget, reference=reference)
    if 2 * len(us) < len(ends):
        raise StackRejected(f"{len(us)} of {len(ends)} unstable leaves survived at depth {n}")
    dist = leaf_distances(wn, us)

    sb, tb = s[in_box], t[in_box]
    tau = transverse_coordinates(us, sb, tb)
    keep = ~np.isnan(tau) & (np.abs(tau) <= config.window)
    w_abs = ens.weights[in_box] * ens.mass
    restricted = RestrictedSample(sb[keep], tb[keep], tau[keep], w_abs[keep], int(n))
    if len(restricted) == 0:
        raise InsufficientMass(f"no particles of the source measure land on the stack at depth {n}")
    part = build_nested_partition(us, restricted.tau, restricted.weights, config.partition_levels,
                                  interval=(-config.window, config.window))
    n_trunc = min(n, stable_truncation(params.lam, r))
    profiles = {k: predicted_leaf_density(family, path, g, n_trunc) for k, g in wn.leaves.items()}
    report = conditional_density_check(wn, restricted, part, config.cube_levels,
                                       config.density_levels, config.min_cell_count, profiles,
                                       config.band_level)
    slope_cap = K_minus * math.exp(-n * params.lam / 2)
    slopes = [abs(d["slope0"]) for d in wn.diagnostics.values()]
    diag = {"K_minus": K_minus, "schedule": schedule.to_dict(), "source_mass": ens.mass,
            "source_leb": fol.leb_mass(), "landed_box_fraction": float(in_box.mean()),
            "stack_mass": float(restricted.weights.sum()),
            "stack_mass_bound": None, "max_slope0": max(slopes, default=0.0),
            "slope0_bound": slope_cap, "rep_qualified": int(len(reps)),
            "rep_total": int(idx.size), "n_trunc": n_trunc}
    return DepthResult(depth=int(n), wn_stack=wn, u_stack=us, leaf_distance=dist,
                       restricted=restricted, partition=part, report=report, profiles=profiles,
                       diagnostics=diag)


@dataclass
class SRBResult:
    config: ExperimentConfig
    l0: float
    source_target: SourceTarget
    reference: ChartFrame
    depths: dict
    failures: dict

    def summary(self) -> dict:
        per = {str(n): d.summary() for n, d in self.depths.items()}
        A = [d.report.A for d in self.depths.values()]
        D = [d.report.distortion.get("D_bar") for d in self.depths.values()]
        return {"config": self.config.to_dict(), "l0": self.l0,
                "source_target": self.source_target.to_dict(),
                "reference": self.reference.to_dict(), "depths": per,
                "A": A, "D_bar": D, "failures": self.failures}


def run_srb_experiment(family: MapFamily, path: NoisePath, stationary: UlamDensity,
                       config: ExperimentConfig, params: ChartParams, workers: int = 1,
                       depths=None) -> SRBResult:
    """Full pipeline over the retained depths; per-depth failures are recorded, not raised."""
    l0 = resolve_l0(family, path, params, config)
    st = find_source_target(family, path, stationary, config, params, l0, workers)
    ref = reference_frame(family, path, st.x_star, config.r_star, params, config.n_dir)
    psi_max = float(stationary.density.max())
    results, failures = {}, {}
    for n in (depths or st.depths):
        try:
            res = run_depth(family, path, st, ref, int(n), config, params, l0, workers)
        except NumericalFailure as exc:
            failures[int(n)] = f"{type(exc).__name__}: {exc}"
            continue
        res.diagnostics["stack_mass_bound"] = config.alpha / (6 * psi_max) * st.c_star
        results[int(n)] = res
    return SRBResult(config, l0, st, ref, results, failures)
