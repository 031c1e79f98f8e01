"""Command-line entry point ``sasaki``.

Vectors and covectors are comma-separated reals in the adapted frame
(``X_1..X_m, Y_1..Y_m, Z``); use ``--x=-1,0,0`` for values with a leading
minus sign.  JSON outputs carry ``version`` and the resolved ``config``;
CSV outputs carry the same information on a leading ``#`` line.

Exit codes: 0 success, 2 usage error, 3 numeric failure (JSON on stderr).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .errors import NumericError

DEFAULT_MODEL = '{"family": "heisenberg", "m": 1, "kappa": 0.0}'
_FUNCS = ("frie", "fsas", "grie", "gsas")
# short names accepted for the Hessian comparison functions
_ALIASES = {"srie": "frie", "ssas": "fsas"}


class UsageError(Exception):
    pass


def _vec(text: str) -> np.ndarray:
    try:
        return np.array([float(s) for s in str(text).split(",") if s.strip() != ""])
    except ValueError as exc:
        raise UsageError(f"cannot parse vector {text!r}") from exc


def _floats(text: str) -> list[float]:
    return [float(v) for v in _vec(text)]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


class Emitter:
    def __init__(self, args, config: dict):
        self.args = args
        self.config = config

    def _stream(self, path):
        if path in (None, "-"):
            return sys.stdout, False
        return open(path, "w", newline=""), True

    def json(self, payload: dict, path=None):
        doc = {"version": __version__, "config": self.config}
        doc.update(payload)
        fh, close = self._stream(path if path is not None else self.args.out)
        json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")
        if close:
            fh.close()

    def csv(self, header, rows, path=None):
        fh, close = self._stream(path if path is not None else self.args.out)
        fh.write("# " + json.dumps({"version": __version__, "config": self.config}, sort_keys=True) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["pole" if isinstance(v, float) and math.isnan(v) else _fmt(v) for v in row])
        if close:
            fh.close()

    def table(self, header, rows):
        """CSV by default, JSON rows with ``--json``."""
        rows = list(rows)
        if self.args.json:
            self.json({"columns": list(header), "rows": [[None if isinstance(v, float) and math.isnan(v) else v for v in r] for r in rows]})
        else:
            self.csv(header, rows)

    def info(self, msg):
        if not self.args.quiet:
            print(msg, file=sys.stderr)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


# --- subcommands ---------------------------------------------------------------------


def cmd_compare(args, model, out: Emitter):
    from . import comparison as cmp

    func = _ALIASES.get(args.func, args.func)
    fn = {"frie": cmp.f_rie_vec, "fsas": cmp.f_sas_vec, "grie": cmp.g_rie_vec, "gsas": cmp.g_sas_vec}[func]
    if args.rmin <= 0 or args.rmax < args.rmin or args.steps < 0:
        raise UsageError("need 0 < rmin <= rmax and steps >= 0")
    rs = np.linspace(args.rmin, args.rmax, args.steps + 1) if args.steps else np.array([args.rmin])
    vals = np.atleast_1d(fn(rs, args.k))
    out.table(["r", "value"], [(float(r), float(v)) for r, v in zip(rs, vals)])


def cmd_geodesic(args, model, out):
    from .geodesics import hamiltonian_flow

    x = _point(args.x, model)
    geo = hamiltonian_flow(model, args.eps, x, _point(args.p, model, "p"), args.T, args.steps)
    header = ["t"] + [f"x{i + 1}" for i in range(model.dim)] + ["h", "v"]
    rows = [[float(t), *map(float, xx), geo.h, geo.v] for t, xx in zip(geo.t, geo.x)]
    out.table(header, rows)


def _point(text, model, name="x"):
    v = _vec(text) if text is not None else np.zeros(model.dim)
    if v.shape != (model.dim,):
        raise UsageError(f"--{name} needs {model.dim} components, got {v.size}")
    return v


def cmd_distance(args, model, out):
    from .geodesics import solve_bvp

    sol = solve_bvp(model, args.eps, _point(args.x, model), _point(args.y, model, "y"), steps=args.steps)
    out.json({"r": sol.r, "p": sol.p, "multiplicity_hint": sol.multiplicity_hint, "residual": sol.residual, "cond": sol.cond, "n_solutions": sol.n_solutions})


def cmd_transport(args, model, out):
    from .transport import transport_between

    tm, sol = transport_between(model, args.eps, _point(args.x, model), _point(args.y, model, "y"), mirror=args.mirror, steps=args.steps)
    out.json({"kind": tm.kind, "matrix": tm.matrix, "r": sol.r, "p": sol.p, "isometry_defect": tm.isometry_defect(model.gram(args.eps) if args.eps > 0 else np.eye(model.dim))})


def cmd_transport_converge(args, model, out):
    from .transport import convergence_probe

    rows = convergence_probe(model, _point(args.x, model), _point(args.y, model, "y"), _floats(args.eps_list), steps=args.steps)
    out.table(["eps", "p_diff", "m_diff", "r"], [(r.eps, r.p_diff, r.m_diff, r.r) for r in rows])


def cmd_index(args, model, out):
    from .jacobi import hessian_check, index_sum

    x, y = _point(args.x, model), _point(args.y, model, "y")
    rep = index_sum(model, args.eps, x, y, steps=args.steps)
    payload = rep.as_dict()
    if args.hessian:
        payload["hessian"] = [r.as_dict() for r in hessian_check(model, args.eps, x, y, steps=args.steps)]
    out.json(payload)


def cmd_expand(args, model, out):
    from .jacobi import expansion_check

    if args.points < 3 or args.tmax <= 0:
        raise UsageError("need --points >= 3 and --tmax > 0")
    ts = np.linspace(-args.tmax, args.tmax, args.points)
    rep, table = expansion_check(
        model, _point(args.x, model), _point(args.y, model, "y"),
        _point(args.psi0, model, "psi0"), _point(args.psi1, model, "psi1"),
        t_list=ts, steps=args.steps, vertical_lift=args.vertical_lift,
    )
    if args.csv:
        out.csv(["t", "f"], [(float(t), float(f)) for t, f in table], path=args.csv)
    out.json({"fit": {"alpha": rep.value, **rep.details}, "bound": rep.bound, "slack": rep.slack, "first_order_ok": abs(rep.details["beta"] - rep.details["c1_minus_c0"]) <= 1e-3})


def cmd_couple(args, model, out):
    from .coupling import run_coupling, verify_bounds

    stats = run_coupling(
        model, args.eps, _point(args.x, model), _point(args.y, model, "y"),
        args.T, args.dt, args.paths, seed=args.seed, n_checkpoints=args.checkpoints,
    )
    if args.csv:
        out.csv(["path_id", "t", "rho", "stopped"], stats.csv_rows(), path=args.csv)
    payload = stats.summary()
    payload["report"] = verify_bounds(stats, model, args.eps)
    out.json(payload)


def cmd_selftest(args, model, out):
    from .selftest import run_selftest

    checks = run_selftest()
    ok = all(c["ok"] for c in checks)
    out.json({"ok": ok, "checks": checks})
    if not ok:
        raise SelftestFailed("selftest failed")


class SelftestFailed(NumericError):
    code = "selftest_failed"


COMMANDS = {
    "compare": cmd_compare,
    "geodesic": cmd_geodesic,
    "distance": cmd_distance,
    "transport": cmd_transport,
    "transport-converge": cmd_transport_converge,
    "index": cmd_index,
    "expand": cmd_expand,
    "couple": cmd_couple,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", default=DEFAULT_MODEL, help="model JSON (inline or file path)")
    common.add_argument("--out", default=None, help="output file (default stdout)")
    common.add_argument("--json", action="store_true", help="emit JSON instead of CSV tables")
    common.add_argument("--quiet", action="store_true", help="suppress informational messages")
    common.add_argument("--config", default=None, help="JSON file whose keys override the options")

    parser = argparse.ArgumentParser(prog="sasaki", description="Sasakian comparison geometry toolkit", parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    p = add("compare", "tabulate a comparison function")
    p.add_argument("--func", required=True, choices=_FUNCS + tuple(_ALIASES))
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--rmin", type=float, required=True)
    p.add_argument("--rmax", type=float, required=True)
    p.add_argument("--steps", type=int, default=10)

    p = add("geodesic", "integrate the Hamiltonian flow")
    p.add_argument("--eps", type=float, default=0.0)
    p.add_argument("--x", default=None)
    p.add_argument("--p", required=True)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=128)

    for name, help_ in (("distance", "solve the boundary value problem"), ("transport", "parallel or mirror map")):
        p = add(name, help_)
        p.add_argument("--eps", type=float, default=0.0)
        p.add_argument("--x", default=None)
        p.add_argument("--y", required=True)
        p.add_argument("--steps", type=int, default=128)
        if name == "transport":
            p.add_argument("--mirror", action="store_true")

    p = add("transport-converge", "distance of P_eps, M_eps from their limits")
    p.add_argument("--x", default=None)
    p.add_argument("--y", required=True)
    p.add_argument("--eps-list", default="1,0.1,0.01,0.001")
    p.add_argument("--steps", type=int, default=128)

    p = add("index", "index sum against the comparison bound")
    p.add_argument("--eps", type=float, default=1e-2)
    p.add_argument("--x", default=None)
    p.add_argument("--y", required=True)
    p.add_argument("--steps", type=int, default=128)
    p.add_argument("--hessian", action="store_true", help="also run the finite-difference Hessian check")

    p = add("expand", "second-order expansion of the distance")
    p.add_argument("--x", default=None)
    p.add_argument("--y", required=True)
    p.add_argument("--psi0", required=True)
    p.add_argument("--psi1", required=True)
    p.add_argument("--tmax", type=float, default=0.02)
    p.add_argument("--points", type=int, default=9)
    p.add_argument("--steps", type=int, default=128)
    p.add_argument("--vertical-lift", action="store_true")
    p.add_argument("--csv", default=None)

    p = add("couple", "Monte-Carlo coupling audit")
    p.add_argument("--eps", type=float, default=1e-2)
    p.add_argument("--x", default=None)
    p.add_argument("--y", default="1,0,0")
    p.add_argument("--T", type=float, default=0.5)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--paths", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoints", type=int, default=50)
    p.add_argument("--csv", default=None)

    add("selftest", "run the built-in invariant checks")
    return parser


def _apply_config(parser, args, argv):
    """Merge ``--config``; file values win over inline flags, with a warning."""
    if not args.config:
        return args
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config!r}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    given = {a.split("=")[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
    for key, val in cfg.items():
        dest = key.replace("-", "_")
        if dest in ("command", "config"):
            continue
        if not hasattr(args, dest):
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        if dest == "model" and isinstance(val, dict):
            val = json.dumps(val)
        if dest in given and getattr(args, dest) != val and not args.quiet:
            print(f"warning: config file overrides --{key}", file=sys.stderr)
        setattr(args, dest, val)
    return args


def run(argv=None) -> int:
    from .models import load_model

    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args = _apply_config(parser, args, argv)
        model = load_model(args.model)
        config = {k: v for k, v in sorted(vars(args).items()) if k not in ("config",)}
        config["model"] = model.spec()
        COMMANDS[args.command](args, model, Emitter(args, config))
    except NumericError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return 3
    except BrokenPipeError:
        # the reader went away (e.g. piped into head); stay quiet like other filters
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (UsageError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(json.dumps({"error": getattr(exc, "code", "usage"), "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
