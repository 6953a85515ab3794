"""Command line interface.

Usage::

    rdslab <command> --config run.json --out DIR [--seed N] [--workers N]
    rdslab plot DIR

Commands: ``stationary``, ``lyapunov``, ``pullback``, ``unstable``, ``srb``,
``entropy`` and ``plot``.  Every command writes its outputs and a
``manifest.json`` (config echo, seeds, timings, checksums) into ``DIR``.
A manifest can be passed back as ``--config`` to repeat a run.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .errors import ConfigError, NumericalFailure
from .manifolds import local_unstable_manifold
from .srb import derive_seed, entropy_consistency, run_srb_experiment
from .tangent import ChartParams, lyapunov_qr
from .transport import (estimate_stationary, load_density_csv, pullback_pushforward,
                        sample_from_density, save_density_csv, save_ensemble, ulam_projection,
                        uniform_ensemble, uniformity_zscore, weak_distance)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
COMMANDS = ("stationary", "lyapunov", "pullback", "unstable", "srb", "entropy")


class MissingInputs(ConfigError):
    """A run directory lacks files a command needs."""


# ---------------------------------------------------------------- output helpers

def jsonable(obj):
    """Plain JSON types: numpy scalars and arrays converted, dict keys as strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dump_json(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return v


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Output directory of one command: files, timings, seeds and the manifest."""

    def __init__(self, out, command: str, cfg: dict):
        self.out = Path(out)
        self.command = command
        self.cfg = cfg
        self.files: list[Path] = []
        self.timings: dict = {}
        self.seeds: dict = {"seed": cfg["seed"], "noise_seed": cfg["system"]["noise"]["seed"]}

    def path(self, name) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def add(self, *paths):
        self.files.extend(Path(p) for p in paths)

    def json(self, name, obj):
        p = self.path(name)
        p.write_text(dump_json(obj))
        self.add(p)
        return p

    def csv(self, name, header, rows):
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                vals = [r[h] for h in header] if isinstance(r, dict) else list(r)
                w.writerow([_fmt(v) for v in vals])
        self.add(p)
        return p

    def seed(self, name) -> int:
        s = derive_seed(self.cfg["seed"], name)
        self.seeds[name] = s
        return s

    @contextmanager
    def stage(self, name):
        t = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = round(time.perf_counter() - t, 6)

    def manifest(self, status: str, results=None, error=None) -> Path:
        files = {}
        for p in sorted(set(self.files)):
            files[p.relative_to(self.out).as_posix()] = {"sha256": sha256(p),
                                                          "bytes": p.stat().st_size}
        man = {"command": self.command, "version": __version__, "status": status,
               "config": self.cfg, "seeds": self.seeds, "timings": self.timings,
               "files": files, "results": results, "error": error}
        p = self.out / "manifest.json"
        p.write_text(dump_json(man))
        return p


# ---------------------------------------------------------------- shared stages

def chart_params(cfg, family, path, run) -> ChartParams:
    c = cfg["chart"]
    lam0 = c["lambda0"]
    if lam0 is None:
        with run.stage("lambda0"):
            lam0 = lyapunov_qr(family, path, np.array(cfg["lyapunov"]["point"]),
                               c["lambda0_steps"]).lambda1
    if not lam0 > 0:
        raise ConfigError(f"system {cfg['system']['name']} has no positive exponent "
                          f"(lambda1 = {lam0:.3g}); charts need lambda0 > 0", "chart.lambda0")
    over = {k: c[k] for k in ("delta0", "delta1", "delta2", "horizon", "K0_bar", "r1_bar",
                              "temper_window")}
    try:
        return ChartParams.from_lambda0(float(lam0), **over)
    except ValueError as exc:
        raise ConfigError(str(exc), "chart") from None


def stationary_density(cfg, family, run):
    s = cfg["stationary"]
    with run.stage("stationary"):
        dens = estimate_stationary(family, s["grid"], s["noise_samples"], s["tol"],
                                   cfgmod.noise_law(cfg), seed=run.seed("stationary"),
                                   max_iter=s["max_iter"])
    run.add(save_density_csv(run.path("stationary.csv"), dens))
    return dens


# ---------------------------------------------------------------- commands

def cmd_stationary(cfg, run):
    """Estimate the stationary density on a grid (Ulam method)."""
    fam = cfgmod.family(cfg)
    dens = stationary_density(cfg, fam, run)
    d = dens.density
    res = {"grid": dens.m, "density_max": float(d.max()), "density_min": float(d.min()),
           "l1_from_uniform": float(np.abs(dens.cells - 1.0 / dens.m ** 2).sum())}
    run.json("stationary.json", res)
    return res


def cmd_lyapunov(cfg, run):
    """Lyapunov exponents by QR iteration, with a convergence trace."""
    fam, path = cfgmod.family(cfg), cfgmod.noise_path(cfg)
    ly = cfg["lyapunov"]
    with run.stage("lyapunov"):
        rep = lyapunov_qr(fam, path, np.array(ly["point"]), ly["steps"], ly["transient"])
    res = rep.to_row(system=cfg["system"]["name"], point=ly["point"])
    run.json("lyapunov.json", res)
    run.csv("lyapunov_trace.csv", ["step", "lambda1", "lambda2"], rep.convergence_trace.tolist())
    return res


def cmd_pullback(cfg, run):
    """Push an ensemble through the pullback maps and record snapshots."""
    fam, path = cfgmod.family(cfg), cfgmod.noise_path(cfg)
    tr = cfg["transport"]
    if tr["initial"] == "stationary":
        dens = stationary_density(cfg, fam, run)
        ens0 = sample_from_density(dens, tr["particles"], run.seed("initial"))
    else:
        ens0 = uniform_ensemble(tr["particles"], run.seed("initial"))
    rows, prev, m = [], None, tr["grid"]
    for n in sorted(tr["depths"]):
        with run.stage(f"depth_{n}"):
            ens = pullback_pushforward(fam, path, ens0, n, cfg["workers"])
        snap = ulam_projection(ens, m)
        run.add(save_density_csv(run.path(f"snapshots/density_n{n:03d}.csv"), snap))
        if tr["save_ensembles"]:
            run.add(*save_ensemble(run.path(f"ensembles/ensemble_n{n:03d}"), ens,
                                   {"depth": n, "system": cfg["system"]["name"],
                                    "noise_seed": path.seed}))
        rows.append({"depth": n, "prev_depth": prev[0] if prev else "",
                     "weak_distance": weak_distance(prev[1], ens) if prev else "",
                     "uniformity_z": uniformity_zscore(ens, m),
                     "max_density": float(snap.density.max()),
                     "min_density": float(snap.density.min())})
        prev = (n, ens)
    run.csv("pullback_trace.csv", list(rows[0]), rows)
    d = [r["weak_distance"] for r in rows[1:]]
    res = {"depths": [r["depth"] for r in rows], "weak_distance": d,
           "decreasing": bool(all(b < a for a, b in zip(d, d[1:]))) if len(d) > 1 else None,
           "max_uniformity_z": max(r["uniformity_z"] for r in rows),
           "particles": tr["particles"]}
    run.json("pullback.json", res)
    return res


def cmd_unstable(cfg, run):
    """Local unstable manifolds through the configured points."""
    fam, path = cfgmod.family(cfg), cfgmod.noise_path(cfg)
    params = chart_params(cfg, fam, path, run)
    un = cfg["unstable"]
    rows, leaves = [], []
    for i, p in enumerate(un["points"]):
        with run.stage(f"leaf_{i}"):
            g = local_unstable_manifold(fam, path, np.array(p), un["n_past"], un["radius"], params,
                                        frames=un["frames"], track_convergence=True)
        xy = g.torus_points()
        rows.extend({"leaf": i, "u": u, "g": v, "x": x, "y": y}
                    for u, v, (x, y) in zip(g.u, g.g, xy))
        leaves.append({"point": p, **g.to_dict()})
    run.csv("leaves.csv", ["leaf", "u", "g", "x", "y"], rows)
    res = {"params": params.to_dict(), "leaves": leaves}
    run.json("unstable.json", res)
    return res


def cmd_entropy(cfg, run):
    """Compare the top exponent with the mean log unstable Jacobian."""
    fam, path = cfgmod.family(cfg), cfgmod.noise_path(cfg)
    en = cfg["entropy"]
    with run.stage("entropy"):
        chk = entropy_consistency(fam, path, np.array(en["point"]), en["steps"], en["n_dir"],
                                  en["transient"])
    res = chk.to_dict()
    run.json("entropy.json", res)
    return res


def _srb_tables(run, result):
    consts, rows, leaves, hists, profs, parts = [], [], [], [], [], []
    for n, d in sorted(result.depths.items()):
        s = d.summary()
        consts.append({"depth": n, "A": s["A"],
                       **{f"A_m{m}": a for m, a in sorted(d.report.A_by_level.items())},
                       "D_bar": s["D_bar"], "D_lip": s["D_lip"], "ks_max": s["ks_max"],
                       "leaf_distance_mean": s["leaf_distance_mean"],
                       "leaf_distance_max": s["leaf_distance_max"],
                       "restricted_particles": s["restricted_particles"],
                       "stack_mass": s["stack_mass"], "stack_mass_bound": s["stack_mass_bound"],
                       "wn_leaves": s["n_wn_leaves"], "u_leaves": s["n_u_leaves"]})
        rows.extend(d.report.rows)
        for kind, st in (("wn", d.wn_stack), ("u", d.u_stack)):
            for k in sorted(st.leaves):
                g = st.leaves[k]
                leaves.extend({"depth": n, "kind": kind, "leaf": k, "u": u, "cs": v}
                              for u, v in zip(g.u, g.g))
        for b, h in sorted(d.report.histograms.items()):
            e = h["edges"]
            hists.extend({"depth": n, "band": b, "bin": i, "lo": e[i], "hi": e[i + 1],
                          "empirical": h["empirical"][i], "predicted": h["predicted"][i]}
                         for i in range(len(e) - 1))
        for k in sorted(d.profiles):
            p = d.profiles[k]
            profs.extend({"depth": n, "leaf": k, "s": a, "rho": b, "log_rho_arc": c}
                         for a, b, c in zip(p.s[::4], p.rho[::4], p.log_rho_arc[::4]))
        parts.extend({"depth": n, **r} for r in d.partition.to_rows())
    header = list(consts[0]) if consts else ["depth"]
    run.csv("constants.csv", header, [{h: c.get(h, "") for h in header} for c in consts])
    run.csv("density_rows.csv", ["depth", "level", "cell", "cube_level", "cube", "ratio", "leb",
                                 "count", "A"], rows)
    run.csv("leaves.csv", ["depth", "kind", "leaf", "u", "cs"], leaves)
    run.csv("histograms.csv", ["depth", "band", "bin", "lo", "hi", "empirical", "predicted"],
            hists)
    run.csv("profiles.csv", ["depth", "leaf", "s", "rho", "log_rho_arc"], profs)
    run.csv("partition.csv", ["depth", "level", "cell", "lo", "hi", "enl_lo", "enl_hi", "parent"],
            parts)


def cmd_srb(cfg, run):
    """End-to-end conditional-density experiment on unstable leaves."""
    fam, path = cfgmod.family(cfg), cfgmod.noise_path(cfg)
    params = chart_params(cfg, fam, path, run)
    ecfg = cfgmod.experiment_config(cfg)
    dens = stationary_density(cfg, fam, run)
    with run.stage("srb"):
        result = run_srb_experiment(fam, path, dens, ecfg, params, cfg["workers"])
    run.seeds.update({f"source_{n}": derive_seed(ecfg.seed, "source", n) for n in ecfg.depths})
    summary = result.summary()
    summary["params"] = params.to_dict()
    run.json("srb.json", summary)
    _srb_tables(run, result)
    if not result.depths:
        raise NumericalFailure("no retained depth completed: "
                               + "; ".join(f"{n}: {m}" for n, m in result.failures.items()))
    return {"A": summary["A"], "D_bar": summary["D_bar"], "failures": summary["failures"]}


# ---------------------------------------------------------------- plotting

def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _require(run_dir: Path, names):
    missing = [n for n in names if not (run_dir / n).exists()]
    if missing:
        raise MissingInputs("missing inputs in " + str(run_dir) + ": " + ", ".join(missing)
                            + " (expected: " + ", ".join(names) + ")", "run_dir")


def cmd_plot(run_dir) -> list:
    """Render the figures of a completed run into ``run_dir/figures``."""
    from . import plotting

    run_dir = Path(run_dir)
    _require(run_dir, ["manifest.json"])
    man = json.loads((run_dir / "manifest.json").read_text())
    command = man.get("command")
    fig = run_dir / "figures"
    out = []
    if command == "stationary":
        _require(run_dir, ["stationary.csv"])
        cells = load_density_csv(run_dir / "stationary.csv").density
        out.append(plotting.density_heatmap(cells, fig / "density_heatmap.svg",
                                            "stationary density"))
    elif command == "lyapunov":
        _require(run_dir, ["lyapunov_trace.csv"])
        t = _read_csv(run_dir / "lyapunov_trace.csv")
        x = [int(float(r["step"])) for r in t]
        out.append(plotting.trace_plot(x, {"lambda1": [float(r["lambda1"]) for r in t],
                                           "lambda2": [float(r["lambda2"]) for r in t]},
                                       fig / "lyapunov_trace.svg", "steps", "running exponent"))
    elif command == "pullback":
        _require(run_dir, ["pullback_trace.csv"])
        t = _read_csv(run_dir / "pullback_trace.csv")
        snaps = [f"snapshots/density_n{int(r['depth']):03d}.csv" for r in t]
        _require(run_dir, snaps)
        cells = load_density_csv(run_dir / snaps[-1]).density
        out.append(plotting.density_heatmap(cells, fig / "density_heatmap.svg",
                                            f"pullback density, depth {t[-1]['depth']}"))
        pts = [r for r in t if r["weak_distance"] != ""]
        out.append(plotting.trace_plot([int(r["depth"]) for r in pts],
                                       {"weak distance": [float(r["weak_distance"]) for r in pts]},
                                       fig / "weak_distance.svg", "depth",
                                       "distance to previous depth", logy=True))
    elif command == "unstable":
        _require(run_dir, ["leaves.csv"])
        rows = _read_csv(run_dir / "leaves.csv")
        groups = {}
        for r in rows:
            groups.setdefault(r["leaf"], ([], []))
            groups[r["leaf"]][0].append(float(r["u"]))
            groups[r["leaf"]][1].append(float(r["g"]))
        curves = {"leaf " + k: [(np.array(v[0]), np.array(v[1]))] for k, v in groups.items()}
        out.append(plotting.leaf_overlay(curves, fig / "leaf_overlay.svg",
                                         title="local unstable manifolds (chart coordinates)"))
    elif command == "srb":
        _require(run_dir, ["leaves.csv", "histograms.csv", "constants.csv", "stationary.csv"])
        cfg = man["config"]
        cells = load_density_csv(run_dir / "stationary.csv").density
        out.append(plotting.density_heatmap(cells, fig / "density_heatmap.svg",
                                            "stationary density"))
        leaves = _read_csv(run_dir / "leaves.csv")
        consts = _read_csv(run_dir / "constants.csv")
        if leaves:
            depth = max(int(r["depth"]) for r in leaves)
            groups = {"W^n": {}, "W^u": {}}
            for r in leaves:
                if int(r["depth"]) != depth:
                    continue
                key = "W^n" if r["kind"] == "wn" else "W^u"
                c = groups[key].setdefault(r["leaf"], ([], []))
                c[0].append(float(r["u"]))
                c[1].append(float(r["cs"]))
            curves = {k: [(np.array(a), np.array(b)) for a, b in v.values()]
                      for k, v in groups.items()}
            out.append(plotting.leaf_overlay(curves, fig / "leaf_overlay.svg",
                                             box=cfg["srb"]["r_star"],
                                             title=f"leaf stacks at depth {depth}"))
        hist = _read_csv(run_dir / "histograms.csv")
        if hist:
            depth = max(int(r["depth"]) for r in hist)
            panels = {}
            for r in hist:
                if int(r["depth"]) != depth:
                    continue
                p = panels.setdefault(r["band"], ([], [], []))
                if not p[0]:
                    p[0].append(float(r["lo"]))
                p[0].append(float(r["hi"]))
                p[1].append(float(r["empirical"]))
                p[2].append(float(r["predicted"]))
            out.append(plotting.histogram_panels(
                [(f"band {b}", *v) for b, v in sorted(panels.items(), key=lambda kv: int(kv[0]))],
                fig / "histograms.svg", f"conditional densities at depth {depth}"))
        if consts:
            x = [int(r["depth"]) for r in consts]
            out.append(plotting.trace_plot(x, {"A": [float(r["A"]) for r in consts],
                                               "1 + D_bar": [1 + float(r["D_bar"]) for r in consts]},
                                           fig / "constants.svg", "depth", "constant"))
    elif command == "entropy":
        _require(run_dir, ["entropy.json"])
        e = json.loads((run_dir / "entropy.json").read_text())
        out.append(plotting.trace_plot([0, 1], {"QR exponent": [e["lambda1"]] * 2,
                                                "mean log J^u": [e["mean_log_unstable_jacobian"]] * 2},
                                       fig / "entropy.svg", "", "rate"))
    else:
        raise MissingInputs(f"manifest names unknown command {command!r}", "command")
    index = {p.name: sha256(p) for p in out}
    (fig / "index.json").write_text(dump_json(index))
    return out


# ---------------------------------------------------------------- entry point

_RUNNERS = {"stationary": cmd_stationary, "lyapunov": cmd_lyapunov, "pullback": cmd_pullback,
            "unstable": cmd_unstable, "srb": cmd_srb, "entropy": cmd_entropy}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rdslab", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"rdslab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=_RUNNERS[name].__doc__ or name)
        p.add_argument("--config", required=True, help="JSON config or a previous manifest.json")
        p.add_argument("--out", required=True, help="run directory (must be new or empty)")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.add_argument("--workers", type=int, default=None, help="worker threads")
    p = sub.add_parser("plot", help="render SVG figures of a completed run")
    p.add_argument("run_dir")
    return ap


def _load(args) -> dict:
    path = Path(args.config)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", "--config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON ({exc.msg} at line {exc.lineno})", "--config") from None
    if isinstance(raw, dict) and "command" in raw and "config" in raw:
        raw = raw["config"]                      # replay from a manifest
    if isinstance(raw, dict):
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.workers is not None:
            raw["workers"] = args.workers
    return cfgmod.validate(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "plot":
        try:
            for p in cmd_plot(args.run_dir):
                print(p)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_OK
    try:
        cfg = _load(args)
        out = Path(args.out)
        if out.exists() and any(out.iterdir()):
            raise ConfigError(f"run directory {out} is not empty", "--out")
        out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    run = Run(out, args.command, cfg)
    try:
        with run.stage("total"):
            results = _RUNNERS[args.command](cfg, run)
    except ConfigError as exc:
        run.manifest("config_error", error={"type": type(exc).__name__, "message": str(exc)})
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        run.manifest("numerical_failure", error={"type": type(exc).__name__, "message": str(exc)})
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    run.manifest("ok", results)
    print(out / "manifest.json")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
