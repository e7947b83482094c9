"""Command-line entry point: ``pilotwave <subcommand> [flags]``.

Every run is file-based. The primary output goes to ``--out`` (with a
``<out>.manifest.json`` beside it) or to stdout. Exit codes are 0 on success,
1 for invalid input and 2 for numerical failure.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import re
import sys
import tempfile
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .constraints import (
    FirstIntegralForm,
    adjudicate_first_integrals,
    count_roots,
    crossing_time_map,
    crossing_time_oracle,
    mirror_check,
    uniqueness_report,
)
from .dynamics import EventKind, EventSpec, IntegratorSettings, fmt, integrate_trajectory
from .equilibrium import compare_distribution, evolve_ensemble, qeh_report, sample_initial
from .errors import NumericalError, ValidationError
from .guidance import grad_check_plane, grad_check_twoslit, plane_field, twoslit_field
from .model import (
    Configuration,
    Kind,
    check_plane_box,
    load_config,
    mirror_partner,
    twoslit_config,
    validate_plane_params,
    validate_twoslit_params,
)
from .wavefunction import _plane_density

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
# flags may carry a,b rounded to ~8 digits; such pairs are rescaled onto the unit circle
CLI_NORM_TOL = 1e-6


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _snake(key: str) -> str:
    return re.sub(r"(?<=[a-z0-9])([A-Z])", r"_\1", key).replace("-", "_").lower()


# -- parameter assembly ------------------------------------------------------------


def _plane_params(args):
    a, b = args.a, args.b
    if a is None or b is None:
        raise ValidationError("plane system needs --a and --b")
    norm2 = a * a + b * b
    if abs(norm2 - 1.0) <= CLI_NORM_TOL:
        a, b = a / norm2**0.5, b / norm2**0.5
    return validate_plane_params({"a": a, "b": b, "p": args.p, "boxN": args.box_n, "hbar": args.hbar, "mass": args.mass})


def _twoslit_params(args):
    if args.k is None:
        raise ValidationError("two-slit system needs --k")
    raw = {"k": args.k, "slit_half_sep": args.slit_half_sep, "exclusion_radius": args.exclusion_radius, "hbar": args.hbar, "mass": args.mass}
    if args.domain_box is not None:
        box = list(args.domain_box)
        if len(box) != 6:
            raise ValidationError("--domain-box takes six numbers: xlo xhi ylo yhi zlo zhi")
        raw["domain_box"] = [box[0:2], box[2:4], box[4:6]]
    return validate_twoslit_params(raw)


def _settings(args, default: IntegratorSettings | None = None):
    base = default or IntegratorSettings()
    kw = {name: getattr(args, name) for name in ("rel_tol", "abs_tol", "max_step") if getattr(args, name, None) is not None}
    s = IntegratorSettings(**{**base.__dict__, **kw})
    if not (s.rel_tol > 0 and s.abs_tol > 0 and s.max_step > 0):
        raise ValidationError("integrator tolerances and max step must be positive")
    return s


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise ValidationError("missing required value(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _plane_dict(params):
    return {"a": params.a, "b": params.b, "p": params.p, "boxN": params.box_n, "hbar": params.hbar, "mass": params.mass}


def _twoslit_dict(params):
    return {
        "k": params.k,
        "slit_half_sep": params.slit_half_sep,
        "exclusion_radius": params.exclusion_radius,
        "domain_box": [list(b) for b in params.domain_box],
        "hbar": params.hbar,
        "mass": params.mass,
    }


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


# -- subcommands -------------------------------------------------------------------
# each returns (primary text, summary dict or None); nothing is written here


def cmd_trajectory(args):
    _need(args, "t1")
    if args.system == "plane":
        params = _plane_params(args)
        if args.x1 is not None or args.x2 is not None:
            _need(args, "x1", "x2")
            x1, x2 = args.x1, args.x2
        else:
            _need(args, "delta0")
            x1, x2 = args.com0 + 0.5 * args.delta0, args.com0 - 0.5 * args.delta0
        cfg = Configuration(Kind.PAIR1D, (x1, x2), args.t0)
        check_plane_box(cfg.delta, params)
        field = plane_field(params)
        pdict = _plane_dict(params)
    else:
        params = _twoslit_params(args)
        if args.start is not None:
            coords = args.start
        else:
            _need(args, "r1")
            coords = mirror_partner(args.r1)
        cfg = twoslit_config(coords, params, args.t0)
        field = twoslit_field(params)
        pdict = _twoslit_dict(params)
    events = [_event(e, args.stop_at_crossing) for e in (args.events or ["box-exit"])]
    traj = integrate_trajectory(cfg, field, (args.t0, args.t1), _settings(args), events, params)
    buf = io.StringIO()
    traj.to_csv(buf)
    summary = {
        "system": args.system,
        "params": pdict,
        "samples": len(traj.times),
        "termination": traj.termination,
        "step_stats": traj.step_stats,
        "events": [{"kind": e.kind.value, "time": e.time} for e in traj.events],
    }
    return buf.getvalue(), summary


def _event(text: str, stop_at_zero: bool = False) -> EventSpec:
    name, _, thr = text.partition(":")
    kinds = {"delta-zero": EventKind.DELTA_ZERO, "box-exit": EventKind.BOX_EXIT, "mirror": EventKind.MIRROR_RESIDUAL}
    if name not in kinds:
        raise ValidationError(f"unknown event {text!r}; choose from {sorted(kinds)} (mirror:THRESHOLD)")
    try:
        threshold = float(thr) if thr else 0.0
    except ValueError:
        raise ValidationError(f"bad event threshold in {text!r}") from None
    terminal = True if name == "delta-zero" and stop_at_zero else None
    return EventSpec(kinds[name], threshold, terminal)


def cmd_ensemble(args):
    _need(args, "n", "seed", "t1")
    params = _plane_params(args)
    ens = sample_initial(params, args.n, args.seed, stratified=not args.iid)
    evolved = evolve_ensemble(ens, plane_field(params), args.t1, _settings(args), periodic=args.periodic, jobs=args.jobs)
    density = lambda d: _plane_density(d, params)  # noqa: E731
    buf = io.StringIO()
    evolved.to_csv(buf)
    summary = {
        "params": _plane_dict(params),
        "n": args.n,
        "seed": args.seed,
        "t1": args.t1,
        "sampling": "iid" if args.iid else "stratified",
        "periodic": args.periodic,
        "excluded": args.n - len(evolved),
        "failures": evolved.failures,
        "initial": compare_distribution(ens, density, args.bins).to_dict(),
        "final": compare_distribution(evolved, density, args.bins).to_dict(),
    }
    return buf.getvalue(), summary


def cmd_roots(args):
    params = _plane_params(args)
    t0 = args.t0
    t = args.t if args.t is not None else t0
    forms = [FirstIntegralForm.TWO_TERM, FirstIntegralForm.DERIVED] if args.form == "both" else [FirstIntegralForm(args.form)]
    out = {"params": _plane_dict(params), "t": t, "t0": t0, "four_ab": 4 * params.a * params.b}
    out["reports"] = {f.value: count_roots(f, t, t0, params, args.samples_per_period).to_dict() for f in forms}
    if t == t0 and args.form == "both":
        out["uniqueness"] = uniqueness_report(params, t0, args.samples_per_period)
    return _json_text(out), None


def cmd_crossing_times(args):
    params = _plane_params(args)
    if args.deltas is not None:
        deltas = np.asarray(args.deltas, dtype=float)
    else:
        _need(args, "n", "range")
        deltas = np.linspace(args.range[0], args.range[1], args.n)
    cmap = crossing_time_map(deltas, params, _settings(args), jobs=args.jobs)
    buf = io.StringIO()
    if args.oracle:
        oracle = [crossing_time_oracle(d, params) for d in cmap.deltas]
        buf.write("delta_init,t_star,t_oracle\n")
        for d, t, o in zip(cmap.deltas, cmap.times, oracle):
            buf.write(f"{fmt(d)},{fmt(t)},{fmt(o)}\n")
    else:
        cmap.to_csv(buf)
    summary = {"params": _plane_dict(params), **cmap.to_dict()}
    if args.oracle:
        rel = np.abs(cmap.times - np.array(oracle)) / np.maximum(np.abs(oracle), 1e-300)
        summary["oracle_max_rel_err"] = float(rel.max())
    return buf.getvalue(), summary


def cmd_grad_check(args):
    out = {}
    if args.system in ("plane", "both"):
        out["plane"] = grad_check_plane(_plane_params(args), args.n, args.seed)
    if args.system in ("twoslit", "both"):
        out["twoslit"] = grad_check_twoslit(_twoslit_params(args), args.n, args.seed)
    return _json_text(out), None


def cmd_mirror_check(args):
    params = _twoslit_params(args)
    rep = mirror_check(params, args.n, args.t1, args.seed, _settings(args), args.perturbation)
    return _json_text({"params": _twoslit_dict(params), **rep}), None


def cmd_integrals(args):
    params = _plane_params(args)
    rep = adjudicate_first_integrals(params, args.n, args.t1, args.seed, _settings(args))
    return _json_text(rep), None


def cmd_qeh(args):
    _need(args, "n", "seed", "t1")
    params = _plane_params(args)
    rep = qeh_report(params, args.n, args.t1, args.seed, _settings(args), args.bins, stratified=not args.iid, jobs=args.jobs)
    return _json_text(rep), None


# -- parser ------------------------------------------------------------------------


def _add_plane(p):
    g = p.add_argument_group("plane pair")
    g.add_argument("--a", type=float)
    g.add_argument("--b", type=float)
    g.add_argument("--p", type=float, default=1.0)
    g.add_argument("--box-n", type=int, default=10, help="box holds 2N+1 half-wavelengths of the relative phase")


def _add_twoslit(p):
    g = p.add_argument_group("two-slit pair")
    g.add_argument("--k", type=float)
    g.add_argument("--slit-half-sep", type=float, default=1.0)
    g.add_argument("--exclusion-radius", type=float, default=1e-3)
    g.add_argument("--domain-box", type=float, nargs=6, metavar="V")


def _add_common(p, seed=False, integrator=True):
    p.add_argument("--config", help="JSON file of parameter values; flags take precedence")
    p.add_argument("--out", help="output file (stdout if omitted)")
    p.add_argument("--jobs", type=int, help="worker cap (default: $PILOTWAVE_JOBS or 1)")
    p.add_argument("--hbar", type=float, default=1.0)
    p.add_argument("--mass", type=float, default=1.0)
    if seed:
        p.add_argument("--seed", type=int, default=0)
    if integrator:
        p.add_argument("--rel-tol", type=float)
        p.add_argument("--abs-tol", type=float)
        p.add_argument("--max-step", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pilotwave", description=__doc__.splitlines()[0], allow_abbrev=False)
    parser.add_argument("--version", action="version", version=f"pilotwave {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trajectory", allow_abbrev=False, help="integrate one trajectory (CSV)")
    p.add_argument("--system", choices=["plane", "twoslit"], default="plane")
    _add_plane(p)
    _add_twoslit(p)
    p.add_argument("--delta0", type=float)
    p.add_argument("--com0", type=float, default=0.0)
    p.add_argument("--x1", type=float)
    p.add_argument("--x2", type=float)
    p.add_argument("--r1", type=float, nargs=3, metavar="V", help="particle 1; particle 2 starts at its mirror image")
    p.add_argument("--start", type=float, nargs=6, metavar="V", help="full two-slit configuration")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--t1", type=float)
    p.add_argument("--events", nargs="*", help="delta-zero, box-exit, mirror:THRESHOLD")
    p.add_argument("--stop-at-crossing", action="store_true", help="make delta-zero terminal")
    _add_common(p)
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("ensemble", allow_abbrev=False, help="sample from |psi|^2, evolve, export (CSV)")
    _add_plane(p)
    p.add_argument("--n", type=int)
    p.add_argument("--t1", type=float)
    p.add_argument("--bins", type=int, default=128)
    p.add_argument("--iid", action="store_true", help="independent draws instead of stratified")
    p.add_argument("--periodic", action="store_true", help="wrap Delta into the box after evolving")
    _add_common(p, seed=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("roots", allow_abbrev=False, help="count solutions of a first integral at time t (JSON)")
    _add_plane(p)
    p.add_argument("--t", type=float)
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--form", choices=["both", FirstIntegralForm.TWO_TERM.value, FirstIntegralForm.DERIVED.value], default="both")
    p.add_argument("--samples-per-period", type=int, default=4096)
    _add_common(p, integrator=False)
    p.set_defaults(func=cmd_roots)

    p = sub.add_parser("crossing-times", allow_abbrev=False, help="time for Delta to reach 0 (CSV)")
    _add_plane(p)
    p.add_argument("--deltas", type=float, nargs="+")
    p.add_argument("--n", type=int)
    p.add_argument("--range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--oracle", action="store_true", help="add a quadrature column")
    _add_common(p)
    p.set_defaults(func=cmd_crossing_times)

    p = sub.add_parser("grad-check", allow_abbrev=False, help="closed-form vs finite-difference velocities (JSON)")
    p.add_argument("--system", choices=["plane", "twoslit", "both"], default="both")
    _add_plane(p)
    _add_twoslit(p)
    p.add_argument("--n", type=int, default=100)
    _add_common(p, seed=True, integrator=False)
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("mirror-check", allow_abbrev=False, help="two-slit runs started on the mirror manifold (JSON)")
    _add_twoslit(p)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--t1", type=float, default=10.0)
    p.add_argument("--perturbation", type=float, default=0.0)
    _add_common(p, seed=True)
    p.set_defaults(func=cmd_mirror_check)

    p = sub.add_parser("integrals", allow_abbrev=False, help="drift of both first-integral forms (JSON)")
    _add_plane(p)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--t1", type=float, default=10.0)
    _add_common(p, seed=True)
    p.set_defaults(func=cmd_integrals)

    p = sub.add_parser("qeh", allow_abbrev=False, help="equivariance report for a sampled ensemble (JSON)")
    _add_plane(p)
    p.add_argument("--n", type=int)
    p.add_argument("--t1", type=float)
    p.add_argument("--bins", type=int, default=128)
    p.add_argument("--iid", action="store_true")
    _add_common(p, seed=True)
    p.set_defaults(func=cmd_qeh)

    p = sub.add_parser("replay", allow_abbrev=False, help="rerun a manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="write here instead of the recorded output")
    p.set_defaults(func=None)
    return parser


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay" or not args.config:
        return parser, args
    try:
        config = load_config(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {args.config}: {exc}") from None
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in subparser._actions}
    values = {}
    for key, value in config.items():
        dest = _snake(key)
        if dest in known and dest not in ("config", "help"):
            values[dest] = value
    subparser.set_defaults(**values)
    return parser, parser.parse_args(argv)


def _jobs(args) -> int:
    jobs = args.jobs
    if jobs is None:
        env = os.environ.get("PILOTWAVE_JOBS")
        try:
            jobs = int(env) if env else 1
        except ValueError:
            raise ValidationError(f"PILOTWAVE_JOBS must be an integer, got {env!r}") from None
    if jobs < 1:
        raise ValidationError("--jobs must be >= 1")
    return jobs


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _recorded_args(args) -> dict:
    skip = {"func", "config", "out", "jobs", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _execute(args, stdout) -> None:
    args.jobs = _jobs(args)
    primary, summary = args.func(args)
    if args.out:
        out = Path(args.out)
        manifest = {
            "command": args.command,
            "params": _recorded_args(args),
            "seed": getattr(args, "seed", None),
            "version": __version__,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "outputs": [str(out)],
        }
        _atomic_write(out, primary)
        _atomic_write(out.with_name(out.name + ".manifest.json"), _json_text(manifest))
        if summary is not None:
            stdout.write(_json_text(summary))
    else:
        stdout.write(primary)


def _replay(args, stdout) -> None:
    try:
        manifest = load_config(args.manifest)
        command, params = manifest["command"], manifest["params"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ValidationError(f"bad manifest {args.manifest}: {exc}") from None
    if manifest.get("version") != __version__:
        print(f"warning: manifest written by version {manifest.get('version')}, running {__version__}", file=sys.stderr)
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices.get(command)
    if sub is None:
        raise ValidationError(f"unknown command in manifest: {command!r}")
    ns = sub.parse_args([])
    for key, value in params.items():
        setattr(ns, key, value)
    ns.command = command
    ns.out = args.out or (manifest.get("outputs") or [None])[0]
    ns.jobs = None
    _execute(ns, stdout)


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        _, args = _parse(list(sys.argv[1:] if argv is None else argv))
        if args.command == "replay":
            _replay(args, stdout)
        else:
            _execute(args, stdout)
    except ValidationError as exc:
        print(f"pilotwave: error: {exc}", file=stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"pilotwave: numerical failure ({type(exc).__name__}): {exc}", file=stderr)
        return EXIT_NUMERICAL
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
