"""Command-line frontend.

Every command resolves its settings from built-in defaults, then an optional
flat ``key = value`` config file, then flags (flags win).  Outputs go to
``--out`` and always embed the resolved parameter set.  Exit codes: 0 on
success, 1 for invalid input, 2 for numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .continuation import BvpUnknowns, continue_branch, export_branch
from .cycles import (
    cycle_to_dict,
    load_cycle_json,
    save_cycle_json,
    shoot_cycle,
    solve_k_for_canard,
    solve_k_for_maximal_canard,
)
from .errors import InvalidParameterError, InvalidStateError, NumericalError
from .hybrid import find_attractor
from .model import (
    ModelParams,
    SlowDynamics,
    State,
    fast_subsystem_bifurcations,
    fast_subsystem_equilibria,
    slow_flow_equilibria,
)

__all__ = ["RunConfig", "parse_config_text", "build_parser", "main"]

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2

# flag name -> ModelParams field
_PARAM_KEYS = {"I": "I", "eps": "eps", "b": "b", "vres": "v_res", "vthr": "v_thr", "k": "k"}


class UsageError(InvalidParameterError):
    pass


@dataclass
class RunConfig:
    params: ModelParams
    settings: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"{flag} = {getattr(self.params, name)!r}" for flag, name in _PARAM_KEYS.items()]
        lines.append(f"model = {self.params.slow.value}")
        lines += [f"{key} = {val}" for key, val in sorted(self.settings.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> RunConfig:
        raw = parse_config_text(text)
        return cls(_params_from(raw), {k: v for k, v in raw.items() if k not in _PARAM_KEYS and k != "model"})


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {n}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("-", "_")
        out["from_" if key == "from" else key] = val
    return out


def _float(key, text) -> float:
    try:
        return float(text)
    except ValueError:
        raise UsageError(f"{key} expects a number, got {text!r}") from None


def _params_from(raw: dict) -> ModelParams:
    kw = {}
    for flag, name in _PARAM_KEYS.items():
        if flag in raw:
            kw[name] = _float(flag, raw[flag])
    if "model" in raw:
        try:
            kw["slow"] = SlowDynamics(raw["model"])
        except ValueError:
            raise UsageError(f"model must be decoupled or coupled, got {raw['model']!r}") from None
    return ModelParams(**kw)


def _grid(spec: str) -> list[float]:
    parts = spec.split(":")
    if len(parts) != 3:
        raise UsageError(f"range {spec!r} must be start:stop:step")
    a, b, h = (_float("range", s) for s in parts)
    if h <= 0 or b < a:
        raise UsageError(f"range {spec!r} needs step > 0 and stop >= start")
    n = int(math.floor((b - a) / h + 1e-9)) + 1
    return [a + i * h for i in range(n)]


# -- parser ---------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("model")
    g.add_argument("--I", dest="I")
    g.add_argument("--eps")
    g.add_argument("--b")
    g.add_argument("--vres")
    g.add_argument("--vthr")
    g.add_argument("--k")
    g.add_argument("--model", choices=[s.value for s in SlowDynamics])
    g.add_argument("--out", help="output directory (default: current directory)")
    g.add_argument("--config", help="flat key = value file; flags override it")
    g.add_argument("--workers", type=int, help="processes for sweep")

    ap = _Parser(prog="aifreset", description="Adaptive integrate-and-fire model with reset")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="simulate and detect the attractor")
    s.add_argument("--v0")
    s.add_argument("--w0")
    s.add_argument("--max-resets", dest="max_resets")

    s = sub.add_parser("fastsub", parents=[common], help="fast-subsystem bifurcation data")
    s.add_argument("--wmin")
    s.add_argument("--wmax")
    s.add_argument("--nw")

    s = sub.add_parser("find-cycle", parents=[common], help="solve for an N-reset cycle")
    s.add_argument("--N", dest="N")
    s.add_argument("--guess", help="anchor w or 'auto'")

    s = sub.add_parser("canard-k", parents=[common], help="reset increment of a canard cycle")
    s.add_argument("--N", dest="N")
    s.add_argument("--kmin")
    s.add_argument("--kmax")
    s.add_argument("--maximal", action="store_const", const="1", help="corner-grazing canard")

    s = sub.add_parser("continue", parents=[common], help="continue a cycle family in k")
    s.add_argument("--N", dest="N")
    s.add_argument("--from", dest="from_", metavar="CYCLE_JSON")
    s.add_argument("--ds")
    s.add_argument("--smax")
    s.add_argument("--direction", help="-1 toward smaller k, +1 toward larger k")

    s = sub.add_parser("sweep", parents=[common], help="attractor reset counts over a k or eps grid")
    s.add_argument("--v0")
    s.add_argument("--w0")
    return ap


_SETTING_DEFAULTS = {
    "simulate": {"v0": None, "w0": None, "max_resets": "400"},
    "fastsub": {"wmin": "0", "wmax": None, "nw": "61"},
    "find-cycle": {"N": "1", "guess": "auto"},
    "canard-k": {"N": "2", "kmin": None, "kmax": None, "maximal": "0"},
    "continue": {"N": None, "from_": None, "ds": "1e-3", "smax": "100", "direction": "-1"},
    "sweep": {"v0": None, "w0": None},
}


def _resolve(args) -> tuple[dict, dict]:
    """Merge config file and flags into (raw parameter strings, settings)."""
    raw = {}
    if args.config:
        try:
            raw.update(parse_config_text(Path(args.config).read_text()))
        except OSError as err:
            raise UsageError(f"cannot read config: {err}") from None
    for key in (*_PARAM_KEYS, "model", "out", "workers"):
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = str(val)
    settings = dict(_SETTING_DEFAULTS[args.command])
    for key in settings:
        if key in raw:
            settings[key] = raw.pop(key)
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = str(val)
    settings["out"] = raw.pop("out", ".")
    settings["workers"] = raw.pop("workers", "1")
    unknown = set(raw) - set(_PARAM_KEYS) - {"model"}
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return raw, settings


def _int(key, text) -> int:
    try:
        return int(text)
    except (TypeError, ValueError):
        raise UsageError(f"{key} expects an integer, got {text!r}") from None


def _outdir(settings) -> Path:
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _param_line(p: ModelParams) -> str:
    return "# params: " + json.dumps(p.as_dict(), sort_keys=True)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _g(x) -> str:
    return f"{x:.17g}"


def _start_state(settings, p: ModelParams) -> State:
    v0 = _float("v0", settings["v0"]) if settings.get("v0") is not None else p.v_res
    w0 = _float("w0", settings["w0"]) if settings.get("w0") is not None else p.v_res + p.I + 0.05
    return State(v0, w0).check()


# -- commands -------------------------------------------------------------------


def cmd_simulate(p: ModelParams, settings: dict) -> int:
    out = _outdir(settings)
    s0 = _start_state(settings, p)
    max_resets = _int("max_resets", settings["max_resets"])
    rep, traj = find_attractor(s0, p, max_resets=max_resets)
    with open(out / "trajectory.csv", "w", newline="") as fh:
        fh.write(_param_line(p) + "\n")
        wr = csv.writer(fh)
        wr.writerow(["t", "v", "w", "zone", "event"])
        for t, v, w, zone, ev in traj.sample(p):
            wr.writerow([_g(t), _g(v), _g(w), zone, ev])
    report = {
        "params": p.as_dict(),
        "initial_state": list(s0),
        "attractor": rep.kind.value,
        "n_resets": rep.n_resets,
        "period": rep.period,
        "anchor_w": rep.anchor_w,
        "diagnostic": rep.diagnostic,
        "summary": str(rep),
    }
    _write_json(out / "report.json", report)
    print(rep)
    return EXIT_OK


def cmd_fastsub(p: ModelParams, settings: dict) -> int:
    out = _outdir(settings)
    bif = fast_subsystem_bifurcations(p)
    wmin = _float("wmin", settings["wmin"])
    wmax = _float("wmax", settings["wmax"]) if settings["wmax"] is not None else bif.homoclinic_w + 0.1
    nw = _int("nw", settings["nw"])
    if nw < 1 or wmax < wmin:
        raise UsageError("need nw >= 1 and wmax >= wmin")
    grid = []
    for w in np.linspace(wmin, wmax, nw):
        eqs = fast_subsystem_equilibria(float(w), p)
        grid.append(
            {"w": float(w), "count": len(eqs), "equilibria": [[e.state.v, e.stability.value, e.admissible] for e in eqs]}
        )
    # direction of the singular flows: fast arrows off the critical manifold, slow drift on it
    arrows = []
    for v in np.linspace(-p.v_thr, p.v_thr, 9):
        for w in np.linspace(wmin, wmax, 7):
            arrows.append({"v": float(v), "w": float(w), "fast_sign": int(np.sign(abs(v) - w + p.I))})
    slow = []
    for v in np.linspace(-p.v_thr, p.v_thr, 21):
        rate = (v - p.b) if p.slow is SlowDynamics.COUPLED else (p.b - (abs(v) + p.I))
        slow.append({"v": float(v), "w": abs(float(v)) + p.I, "slow_sign": int(np.sign(rate))})
    data = {
        "params": p.as_dict(),
        "saddle_node_w": bif.saddle_node_w,
        "homoclinic_w": bif.homoclinic_w,
        "grid": grid,
        "fast_arrows": arrows,
        "slow_drift": slow,
    }
    if p.slow is SlowDynamics.COUPLED:
        data["slow_equilibria"] = [[e.state.v, e.state.w, e.stability.value] for e in slow_flow_equilibria(p)]
    _write_json(out / "fastsub.json", data)
    print(f"saddle_node_w={bif.saddle_node_w:.17g} homoclinic_w={bif.homoclinic_w:.17g}")
    return EXIT_OK


def _cycle_summary(c) -> str:
    return (
        f"{c.n_resets}-reset cycle: anchor_w={c.anchor.w:.17g} period={c.period:.10g} "
        f"mu={c.floquet:.6g} residual={c.residual:.3g} canard={c.canard.value}"
    )


def cmd_find_cycle(p: ModelParams, settings: dict) -> int:
    out = _outdir(settings)
    n = _int("N", settings["N"])
    guess = settings["guess"]
    guess = guess if guess == "auto" else _float("guess", guess)
    c = shoot_cycle(guess, n, p)
    save_cycle_json(out / "cycle.json", c, p)
    print(_cycle_summary(c))
    return EXIT_OK


def cmd_canard_k(p: ModelParams, settings: dict) -> int:
    out = _outdir(settings)
    n = _int("N", settings["N"])
    rng = None
    if settings["kmin"] is not None or settings["kmax"] is not None:
        if settings["kmin"] is None or settings["kmax"] is None:
            raise UsageError("give both kmin and kmax")
        rng = (_float("kmin", settings["kmin"]), _float("kmax", settings["kmax"]))
    solver = solve_k_for_maximal_canard if settings["maximal"] not in ("0", "false", "no") else solve_k_for_canard
    sol = solver(n, p, k_range=rng)
    data = {"params": sol.params.as_dict(), "k_star": sol.k_star, "cycle": cycle_to_dict(sol.cycle, sol.params)}
    _write_json(out / "canard.json", data)
    print(f"k*={sol.k_star:.17g}  {_cycle_summary(sol.cycle)}")
    return EXIT_OK


def cmd_continue(p: ModelParams, settings: dict) -> int:
    out = _outdir(settings)
    if settings["from_"] is not None:
        c, q = load_cycle_json(settings["from_"])
        p = q or p
    else:
        c = None
    n = _int("N", settings["N"]) if settings["N"] is not None else (c.n_resets if c else 2)
    if c is None:
        c = shoot_cycle("auto", n, p)
    if c.n_resets != n:
        raise UsageError(f"cycle file holds a {c.n_resets}-reset cycle, --N asks for {n}")
    direction = _int("direction", settings["direction"])
    if direction not in (-1, 1):
        raise UsageError("direction must be -1 or 1")
    start = BvpUnknowns.from_cycle(c, p)
    br = continue_branch(
        start, n, p, ds=_float("ds", settings["ds"]), s_max=_float("smax", settings["smax"]), direction=direction
    )
    export_branch(br, out, "branch")
    print(f"{len(br.points)} points, k in [{br.k.min():.17g}, {br.k.max():.17g}], termination: {br.termination}")
    return EXIT_OK


def _sweep_point(job):
    name, value, pdict, s0 = job
    p = ModelParams.from_dict({**pdict, name: value})
    try:
        rep, _ = find_attractor(s0, p)
    except NumericalError as err:
        return value, "error", None, str(err)
    return value, rep.kind.value, rep.n_resets, rep.diagnostic


def cmd_sweep(p: ModelParams, settings: dict, raw: dict) -> int:
    out = _outdir(settings)
    ranges = {f: raw[f] for f in ("k", "eps") if f in raw and ":" in raw[f]}
    if len(ranges) != 1:
        raise UsageError("sweep needs exactly one of --k or --eps given as start:stop:step")
    (flag, spec), = ranges.items()
    name = _PARAM_KEYS[flag]
    values = _grid(spec)
    for v in values:
        p.with_(**{name: v})  # validate the whole grid up front
    workers = _int("workers", settings["workers"])
    if workers < 1:
        raise UsageError("workers must be >= 1")
    s0 = tuple(_start_state(settings, p))
    jobs = [(name, v, p.as_dict(), s0) for v in values]
    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        fh.write(_param_line(p) + "\n")
        wr = csv.writer(fh)
        wr.writerow([name, "attractor", "n_resets", "diagnostic"])
        fh.flush()
        if workers == 1:
            results = map(_sweep_point, jobs)
            pool = None
        else:
            pool = ProcessPoolExecutor(max_workers=workers)
            results = pool.map(_sweep_point, jobs)
        try:
            for value, kind, n, diag in results:
                wr.writerow([_g(value), kind, "" if n is None else n, diag])
                fh.flush()
                print(f"{name}={value:.17g}: {kind}" + (f" N={n}" if n is not None else ""))
        finally:
            if pool is not None:
                pool.shutdown()
        fh.write(f"# complete {len(values)}/{len(values)}\n")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "fastsub": cmd_fastsub,
    "find-cycle": cmd_find_cycle,
    "canard-k": cmd_canard_k,
    "continue": cmd_continue,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw, settings = _resolve(args)
        params_raw = {k: v for k, v in raw.items() if not (args.command == "sweep" and ":" in v)}
        p = _params_from(params_raw)
        if args.command == "sweep":
            return cmd_sweep(p, settings, raw)
        return _COMMANDS[args.command](p, settings)
    except (InvalidParameterError, InvalidStateError, OSError, KeyError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, ArithmeticError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
