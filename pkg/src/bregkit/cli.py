"""Command-line front end: ``bregkit <subcommand> [flags]``.

Every subcommand takes ``--config FILE.json`` (keys are flag names with
underscores) and ``--out DIR``; explicit flags override the config file.
Arrays are read and written as header-less CSV; reports are JSON. Each run
writes ``manifest.json`` (version, config echo, seed, wall time) into ``--out``.

Exit codes: 0 success, 1 usage or I/O error, 2 numerical failure or violated
check (a ``failure.json`` with the structured error is written).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import BoundViolated, BregkitError

log = logging.getLogger("bregkit")


class UsageError(Exception):
    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# input helpers


def _read_csv(path):
    from .operators import read_matrix_csv
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {path}", path=str(path))
    try:
        return read_matrix_csv(p)
    except ValueError as exc:
        raise UsageError(f"cannot parse {path}: {exc}", path=str(path)) from exc


def parse_vector(text):
    """A CSV path, or an inline comma-separated list of numbers."""
    if isinstance(text, (list, tuple)):
        return np.asarray(text, dtype=float)
    try:
        return np.array([float(x) for x in str(text).split(",")])
    except ValueError:
        return _read_csv(text).reshape(-1)


def parse_operator(text):
    """``identity:n``, ``gaussian:M:N:seed`` or a CSV path (optionally ``csv:path``)."""
    from .operators import LinOp
    parts = str(text).split(":")
    try:
        if parts[0] == "identity" and len(parts) == 2:
            return LinOp.identity(int(parts[1]))
        if parts[0] == "gaussian" and len(parts) == 4:
            return LinOp.gaussian(int(parts[1]), int(parts[2]), int(parts[3]))
    except ValueError as exc:
        raise UsageError(f"bad operator spec {text!r}: {exc}") from exc
    path = text[4:] if str(text).startswith("csv:") else text
    return LinOp(_read_csv(path))


def parse_functional(name, weights=None, h=None):
    from .convex import functional_from_dict
    spec = {"kind": name}
    if weights is not None:
        spec["weights"] = parse_vector(weights) if isinstance(weights, str) else weights
    if h is not None:
        spec["h"] = float(h)
    return functional_from_dict(spec)


def parse_support(text):
    """``"0:+1,5:-1"`` -> SignedSupport."""
    from .operators import SignedSupport
    signs = {}
    try:
        for item in str(text).split(","):
            i, s = item.split(":")
            signs[int(i)] = int(float(s))
    except ValueError as exc:
        raise UsageError(f"bad support spec {text!r}; expected 'index:sign,...'") from exc
    return SignedSupport(signs)


def _need(cfg, *keys):
    for k in keys:
        if cfg.get(k) is None:
            raise UsageError(f"missing required option --{k.replace('_', '-')}")


# ---------------------------------------------------------------------------
# output helpers


class Outputs:
    def __init__(self, root):
        self.root = Path(root)
        self.files = []

    def path(self, name):
        self.files.append(name)
        return self.root / name

    def json(self, name, obj):
        with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(obj, fh, indent=1, default=_jsonable)
            fh.write("\n")

    def vector(self, name, v):
        from .operators import write_vector_csv
        write_vector_csv(self.path(name), v)

    def matrix(self, name, A):
        from .operators import write_matrix_csv
        write_matrix_csv(self.path(name), A)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if hasattr(x, "to_dict"):
        return x.to_dict()
    return str(x)


# ---------------------------------------------------------------------------
# subcommands; each returns a dict summary (echoed to stdout)


def cmd_bregman(cfg, out):
    from .convex import bregman, conjugate_bregman, make_pair, subgradient_select
    _need(cfg, "functional", "u", "v")
    J = parse_functional(cfg["functional"], cfg.get("weights"), cfg.get("h"))
    u, v = parse_vector(cfg["u"]), parse_vector(cfg["v"])
    pair = make_pair(J, u, parse_vector(cfg["p"])) if cfg.get("p") is not None else subgradient_select(J, u)
    res = {"functional": J.to_dict(), "p": pair.p, "distance": bregman(J, v, pair)}
    try:
        res["conjugate_distance"] = conjugate_bregman(J, pair.p, subgradient_select(J, v))
    except BregkitError:
        pass
    out.json("bregman.json", res)
    return res


def cmd_solve(cfg, out):
    from .variational import RegProblem, solve
    _need(cfg, "K", "f", "alpha")
    K = parse_operator(cfg["K"])
    R = parse_functional(cfg.get("functional") or "l1", cfg.get("weights"), cfg.get("h"))
    sol = solve(RegProblem(K, parse_vector(cfg["f"]), float(cfg["alpha"]), R), tol=float(cfg.get("tol") or 1e-10))
    out.vector("u.csv", sol.u)
    out.vector("p.csv", sol.p)
    out.vector("w.csv", sol.w)
    res = {"objective": sol.objective, "kkt_residual": sol.kkt_residual,
           "certified": sol.certified, "iterations": sol.iterations}
    out.json("solve.json", res)
    return res


def cmd_biter(cfg, out):
    from .bregman_iter import Discrepancy, FixedIterations, run, write_history_csv
    _need(cfg, "K", "f", "alpha")
    K = parse_operator(cfg["K"])
    f = parse_vector(cfg["f"])
    R = parse_functional(cfg.get("functional") or "l1", cfg.get("weights"), cfg.get("h"))
    if cfg.get("iterations") is not None:
        stop = FixedIterations(int(cfg["iterations"]))
    else:
        stop = Discrepancy(float(cfg.get("delta") or 0.0), float(cfg.get("tau") or 1.0))
    hist = run(K, f, float(cfg["alpha"]), R, stop, max_iter=int(cfg.get("max_iter") or 100))
    truth = parse_vector(cfg["truth"]) if cfg.get("truth") is not None else None
    write_history_csv(out.path("history.csv"), hist, R, truth)
    out.vector("u.csv", hist[-1].u)
    res = {"iterations": hist[-1].k, "residual": hist[-1].residual,
           "iterates": [s.u.tolist() for s in hist]}
    out.json("biter.json", res)
    return res


def cmd_iss(cfg, out):
    from .iss import SpectralFilter, decay_check, iss_solve, spectral_filter
    _need(cfg, "K", "f")
    K = parse_operator(cfg["K"])
    f = parse_vector(cfg["f"])
    traj = iss_solve(K, f, max_breakpoints=int(cfg.get("max_breakpoints") or 10000))
    traj.write_json(out.path("trajectory.json"))
    traj.write_csv(out.path("trajectory.csv"))
    res = {"breakpoints": traj.times[1:].tolist(), "terminal": traj.terminal}
    if cfg.get("filter"):
        filt = SpectralFilter.parse(cfg["filter"])
        out.vector("filtered.csv", spectral_filter(traj, filt))
        res["filter"] = filt.label
    rows = decay_check(K, f, traj)
    with open(out.path("decay.csv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("t,lhs,rhs,holds\n")
        for r in rows:
            fh.write(f"{r.t!r},{r.lhs!r},{r.rhs!r},{str(r.holds).lower()}\n")
    res["decay_holds"] = all(r.holds for r in rows)
    if not res["decay_holds"]:
        raise BoundViolated("decay inequality failed at a breakpoint", report=res)
    return res


def cmd_fp(cfg, out):
    from .fokker_planck import (FPProblem, GridFunction, dissipation_report, evolve,
                                relative_entropy, steady_state)
    d = {}
    if cfg.get("problem"):
        p = Path(cfg["problem"])
        if not p.is_file():
            raise UsageError(f"input file not found: {p}", path=str(p))
        d = json.loads(p.read_text(encoding="utf-8"))
    for k in ("L", "n", "topology", "force", "dt", "T"):
        if cfg.get(k) is not None:
            d[k] = cfg[k]
    d.setdefault("L", 1.0)
    d.setdefault("n", 128)
    if isinstance(d.get("force"), str):
        d["force"] = parse_vector(d["force"])
    prob = FPProblem.from_dict(d)
    dt, T = float(d.get("dt", 1e-4)), float(d.get("T", 0.1))
    g = prob.grid
    u_inf = steady_state(prob)
    u0 = 1.0 + 0.5 * np.cos(2 * math.pi * g.centers / g.L)
    u0 = GridFunction(u0 / (u0.sum() * g.h), g)
    states = evolve(prob, u0, dt, T)
    rep = dissipation_report(states, u_inf, dt)
    rep.write_csv(out.path("dissipation.csv"))
    out.vector("steady_state.csv", u_inf.values)
    out.vector("final.csv", states[-1].values)
    res = {"rate": rep.rate, "steps": len(states) - 1,
           "final_entropy": relative_entropy(states[-1], u_inf),
           "max_mass_drift": max(abs(s.mass - 1.0) for s in states),
           "min_density": float(min(s.values.min() for s in states))}
    out.json("fp.json", res)
    return res


def cmd_galerkin(cfg, out):
    from .galerkin import (Mesh1D, PLaplaceProblem, bregman_projection_check, energy,
                           random_candidates, solve_galerkin)
    _need(cfg, "p")
    f = cfg.get("f")
    if f is None:
        f = 1.0
    elif isinstance(f, str):
        f = parse_vector(f)
        f = float(f[0]) if f.size == 1 else f
    prob = PLaplaceProblem(float(cfg["p"]), f)
    coarse = Mesh1D(int(cfg.get("m") or 16))
    fine = Mesh1D(int(cfg.get("m_ref") or 16 * coarse.m))
    u_h = solve_galerkin(prob, coarse)
    u_ref = solve_galerkin(prob, fine)
    cands = random_candidates(u_h, int(cfg.get("candidates") or 100), seed=int(cfg.get("seed") or 0))
    rep = bregman_projection_check(prob, u_ref, u_h, cands)
    rep.write_csv(out.path("projection.csv"))
    out.vector("solution.csv", u_h.values)
    res = {"energy": energy(prob, u_h), "D_uh": rep.D_uh, "tol_ref": rep.tol_ref,
           "candidates": len(cands), "passed": rep.passed}
    out.json("galerkin.json", res)
    if not rep.passed:
        raise BoundViolated("Bregman projection inequality failed", report=res)
    return res


def cmd_sinkhorn(cfg, out):
    from .entropic_ot import DiscreteMeasure, sinkhorn
    _need(cfg, "mu", "nu", "C", "eps")
    mu = DiscreteMeasure(parse_vector(cfg["mu"]))
    nu = DiscreteMeasure(parse_vector(cfg["nu"]))
    C = _read_csv(cfg["C"]) if not isinstance(cfg["C"], list) else np.asarray(cfg["C"], dtype=float)
    plan = sinkhorn(mu, nu, C, float(cfg["eps"]), tol=float(cfg.get("tol") or 1e-9),
                    max_iter=int(cfg.get("max_iter") or 100000))
    plan.write_csv(out.path("plan.csv"))
    plan.write_summary(out.path("summary.json"))
    return plan.summary()


def _triple_from_cfg(cfg, K):
    from .variational import make_source_triple
    _need(cfg, "support")
    mags = parse_vector(cfg["magnitudes"]) if cfg.get("magnitudes") is not None else None
    return make_source_triple(K, parse_support(cfg["support"]), rng_seed=int(cfg.get("seed") or 0),
                              margin=float(cfg.get("margin") or 0.1), magnitudes=mags)


def cmd_uq(cfg, out):
    from .uq import NoiseModel, expected_bound_check, optimal_alpha
    _need(cfg, "K", "sigma")
    K = parse_operator(cfg["K"])
    triple = _triple_from_cfg(cfg, K)
    noise = NoiseModel(float(cfg["sigma"]), int(cfg.get("seed") or 0))
    alpha = cfg.get("alpha")
    alpha = (optimal_alpha(K.shape[0], noise.sigma, float(np.linalg.norm(triple.w_star)))
             if alpha is None else float(alpha))
    rep = expected_bound_check(K, triple, noise, alpha, int(cfg.get("samples") or 1000),
                               raise_on_fail=False)
    rep.write_json(out.path("report.json"))
    if not rep.passed:
        raise BoundViolated("expected Bregman-distance check failed", report=rep)
    return rep.to_dict()


def cmd_rate(cfg, out):
    from .variational import rate_study
    _need(cfg, "K", "deltas")
    K = parse_operator(cfg["K"])
    triple = _triple_from_cfg(cfg, K)
    table = rate_study(K, triple, parse_vector(cfg["deltas"]).tolist(), seed=int(cfg.get("seed") or 0))
    table.write_csv(out.path("rate.csv"))
    res = {"rows": len(table.rows), "seed": table.seed,
           "max_ratio": max((r.bregman_distance / r.bound for r in table.rows if r.bound > 0), default=0.0)}
    out.json("rate.json", res)
    return res


COMMANDS = {
    "bregman": (cmd_bregman, "evaluate a Bregman distance"),
    "solve": (cmd_solve, "solve a regularized least-squares problem"),
    "biter": (cmd_biter, "Bregman iteration with discrepancy stopping"),
    "iss": (cmd_iss, "exact l1 inverse scale space flow and spectral filter"),
    "fp": (cmd_fp, "Fokker-Planck evolution with relative-entropy report"),
    "galerkin": (cmd_galerkin, "p-Laplace Galerkin solve and projection check"),
    "sinkhorn": (cmd_sinkhorn, "entropic optimal transport"),
    "uq": (cmd_uq, "Monte-Carlo check of the expected Bregman error bound"),
    "rate": (cmd_rate, "convergence-rate study under a source condition"),
}


def build_parser():
    ap = _Parser(prog="bregkit", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"bregkit {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON file with default option values")
        p.add_argument("--out", help="output directory (default: current directory)")
        p.add_argument("--seed", type=int)
        p.add_argument("-v", "--verbose", action="store_true", default=None)

    def op_args(p):
        p.add_argument("--K", help="identity:n | gaussian:M:N:seed | CSV path")
        p.add_argument("--f", help="data vector (CSV path or inline list)")

    def reg_args(p):
        p.add_argument("--alpha", type=float)
        p.add_argument("--functional", choices=["l1", "l2", "tv", "entropy"])
        p.add_argument("--weights")
        p.add_argument("--h", type=float)

    p = sub.add_parser("bregman", help=COMMANDS["bregman"][1])
    common(p)
    p.add_argument("--functional", choices=["l1", "l2", "tv", "entropy"])
    p.add_argument("--weights")
    p.add_argument("--h", type=float)
    p.add_argument("--u")
    p.add_argument("--v")
    p.add_argument("--p", help="subgradient at u (default: canonical selection)")

    p = sub.add_parser("solve", help=COMMANDS["solve"][1])
    common(p)
    op_args(p)
    reg_args(p)
    p.add_argument("--tol", type=float)

    p = sub.add_parser("biter", help=COMMANDS["biter"][1])
    common(p)
    op_args(p)
    reg_args(p)
    p.add_argument("--delta", type=float, help="noise level for the discrepancy principle")
    p.add_argument("--tau", type=float)
    p.add_argument("--iterations", type=int, help="fixed iteration count instead of discrepancy")
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--truth", help="exact solution for Bregman-distance tracking")

    p = sub.add_parser("iss", help=COMMANDS["iss"][1])
    common(p)
    op_args(p)
    p.add_argument("--filter", help="constant:c | indicator:lo:hi")
    p.add_argument("--max-breakpoints", dest="max_breakpoints", type=int)

    p = sub.add_parser("fp", help=COMMANDS["fp"][1])
    common(p)
    p.add_argument("--problem", help="JSON with L, n, topology, force, dt, T")
    p.add_argument("--L", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--topology", choices=["periodic", "interval"])
    p.add_argument("--force", help="constant or per-face values")
    p.add_argument("--dt", type=float)
    p.add_argument("--T", type=float)

    p = sub.add_parser("galerkin", help=COMMANDS["galerkin"][1])
    common(p)
    p.add_argument("--p", type=float)
    p.add_argument("--m", type=int)
    p.add_argument("--m-ref", dest="m_ref", type=int)
    p.add_argument("--f", help="constant load or nodal samples")
    p.add_argument("--candidates", type=int)

    p = sub.add_parser("sinkhorn", help=COMMANDS["sinkhorn"][1])
    common(p)
    p.add_argument("--mu")
    p.add_argument("--nu")
    p.add_argument("--C")
    p.add_argument("--eps", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)

    for name in ("uq", "rate"):
        p = sub.add_parser(name, help=COMMANDS[name][1])
        common(p)
        p.add_argument("--K")
        p.add_argument("--support", help="index:sign,... of the sparse truth")
        p.add_argument("--magnitudes")
        p.add_argument("--margin", type=float)
        if name == "uq":
            p.add_argument("--sigma", type=float)
            p.add_argument("--alpha", type=float, help="default: bound-minimizing alpha")
            p.add_argument("--samples", type=int)
        else:
            p.add_argument("--deltas", help="noise levels, comma separated")
    return ap


def _merge(args):
    cfg = {}
    if args.config:
        p = Path(args.config)
        if not p.is_file():
            raise UsageError(f"config file not found: {p}", path=str(p))
        try:
            cfg = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"cannot parse {p}: {exc}", path=str(p)) from exc
        if not isinstance(cfg, dict):
            raise UsageError(f"config {p} must hold a JSON object", path=str(p))
    for k, v in vars(args).items():
        if k in ("config", "command") or v is None:
            continue
        cfg[k] = v
    return cfg


def main(argv=None):
    t0 = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        cfg = _merge(args)
        logging.basicConfig(level=logging.DEBUG if cfg.get("verbose") else logging.WARNING)
        out = Outputs(cfg.get("out") or ".")
        try:
            out.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise UsageError(f"cannot create output directory: {exc}", path=str(out.root)) from exc
    except UsageError as exc:
        _emit({"status": "usage_error", "message": str(exc), "path": exc.path})
        return 1

    func = COMMANDS[args.command][0]
    manifest = {"version": __version__, "command": args.command, "config": cfg,
                "seed": cfg.get("seed"), "threads": os.environ.get("BREGKIT_THREADS", "0")}
    code = 0
    try:
        res = func(cfg, out)
        manifest["status"] = "ok"
        _emit({"status": "ok", "command": args.command, "result": res})
    except UsageError as exc:
        manifest["status"] = "usage_error"
        _emit({"status": "usage_error", "message": str(exc), "path": exc.path})
        code = 1
    except OSError as exc:
        manifest["status"] = "usage_error"
        _emit({"status": "usage_error", "message": str(exc), "path": getattr(exc, "filename", None)})
        code = 1
    except (BregkitError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        if isinstance(exc, BregkitError):
            fail = {"status": "failure", **exc.to_dict()}
        else:
            fail = {"status": "failure", "error": type(exc).__name__, "code": "numerical",
                    "message": str(exc)}
        rep = getattr(exc, "report", None)
        if rep is not None:
            fail["report"] = rep
        out.json("failure.json", fail)
        manifest["status"] = "failure"
        _emit(fail)
        code = 2
    manifest["wall_time"] = time.perf_counter() - t0
    manifest["outputs"] = sorted(set(out.files))
    try:
        with open(out.root / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(manifest, fh, indent=1, default=_jsonable)
            fh.write("\n")
    except OSError:
        code = code or 1
    return code


def _emit(obj):
    sys.stdout.write(json.dumps(obj, default=_jsonable) + "\n")


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
