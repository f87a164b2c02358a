"""Command-line entry point.

Exit codes: 0 success, 1 bad input or config, 2 inadmissible matrix or
subsolution, 3 unresolvable frequency (message names the needed n_space),
4 a verification fell outside tolerance, 5 a step aborted on its residual.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import diagnose
from .convexint import (
    MissingFamily,
    NotStrong,
    ResolutionError,
    StepAborted,
    SubsolutionState,
    init_schedule,
    run,
)
from .grid import Field, GridSpec, load_fields, save_fields, sym_pairs
from .matgeom import DirectionFamilies, InadmissibleMatrix, gamma_coeffs, in_Md, packaged_families, reconstruct
from .calculus import div_outer_arr, grad_arr
from .stationary import assemble_W, mean_WW

# ---------------------------------------------------------------- config

_NUM = {"type": "number"}
_NUM_LIST = {"type": "array", "items": _NUM}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "dimension": {"enum": [2, 3]},
        "n_space": {"type": "integer", "minimum": 8},
        "n_time": {"type": "integer", "minimum": 4},
        "energy": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "value"],
                    "properties": {"kind": {"const": "constant"}, "value": _NUM},
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "mean", "amplitude"],
                    "properties": {"kind": {"const": "sinusoidal"}, "mean": _NUM, "amplitude": _NUM, "phase": _NUM},
                },
            ]
        },
        "subsolution": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {"kind": {"const": "trivial"}},
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "matrix"],
                    "properties": {"kind": {"const": "constant_stress"}, "matrix": {"type": "array", "items": _NUM_LIST}},
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "amplitude"],
                    "properties": {"kind": {"const": "cosine_stress"}, "amplitude": _NUM},
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "path"],
                    "properties": {"kind": {"const": "file"}, "path": {"type": "string"}},
                },
            ]
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "contraction": _NUM,
                "eps": _NUM,
                "sigma": _NUM,
                "velocity_const": _NUM,
                "ball_radius": _NUM,
                "mollify_const": _NUM,
                "frequency_const": _NUM,
                "families": {"type": ["string", "null"]},
                "families_N": {"type": "integer", "minimum": 1},
            },
        },
        "n_steps": {"type": "integer", "minimum": 0},
        "frequencies": {"type": ["array", "null"], "items": {"type": "integer", "minimum": 1}},
        "mollify_scales": {"type": ["array", "null"], "items": {"type": "number", "exclusiveMinimum": 0}},
        "tolerance": {"type": ["number", "null"]},
        "out": {"type": "string"},
    },
}

_OVERRIDE_KEYS = ("contraction", "velocity_const", "ball_radius", "mollify_const", "frequency_const")


@dataclass
class RunConfig:
    dimension: int = 2
    n_space: int = 256
    n_time: int = 64
    energy: dict = field(default_factory=lambda: {"kind": "sinusoidal", "mean": 1.0, "amplitude": 0.1, "phase": 0.0})
    subsolution: dict = field(default_factory=lambda: {"kind": "trivial"})
    schedule: dict = field(default_factory=lambda: {"eps": 1.0, "mollify_const": 1.0, "frequency_const": 1.0})
    n_steps: int = 1
    frequencies: list | None = None
    mollify_scales: list | None = None
    tolerance: float | None = None
    out: str = "run_out"

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        jsonschema.validate(obj, CONFIG_SCHEMA)
        return cls(**obj)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def grid(self) -> GridSpec:
        return GridSpec(self.dimension, self.n_space, self.n_time)

    def energy_profile(self, t: np.ndarray) -> np.ndarray:
        e = self.energy
        if e["kind"] == "constant":
            return np.full(t.shape, float(e["value"]))
        return e["mean"] + e["amplitude"] * np.sin(t + e.get("phase", 0.0))

    def families(self) -> DirectionFamilies:
        s = self.schedule
        if s.get("families"):
            fams = DirectionFamilies.load(s["families"])
            if fams.d != self.dimension:
                raise ValueError("families fixture has the wrong dimension")
            return fams
        return packaged_families(self.dimension, int(s.get("families_N", 1)))

    def overrides(self) -> dict:
        return {k: float(self.schedule[k]) for k in _OVERRIDE_KEYS if k in self.schedule}


def initial_state(cfg: RunConfig) -> SubsolutionState:
    spec = cfg.grid()
    d = spec.d
    e = cfg.energy_profile(spec.times())
    sub = cfg.subsolution
    kind = sub["kind"]
    if kind == "trivial":
        return SubsolutionState.trivial(spec, e)
    if kind == "file":
        fspec, fields, header = load_fields(Path(sub["path"]))
        if fspec != spec:
            raise ValueError("subsolution file grid differs from the configured grid")
        return state_from_fields(fields, header)
    st = SubsolutionState.trivial(spec, e)
    if kind == "constant_stress":
        m = np.asarray(sub["matrix"], dtype=float)
        if m.shape != (d, d) or not np.allclose(m, m.T) or abs(np.trace(m)) > 1e-12:
            raise ValueError("constant stress must be a symmetric trace-free d x d matrix")
        comps = np.array([m[a, b] for a, b in sym_pairs(d)])
        st.stress = Field(spec, "symtensor", np.broadcast_to(comps.reshape((-1,) + (1,) * (d + 1)), st.stress.data.shape).copy())
        return st
    # cosine_stress: stress = a cos x1 diag(1, -1, 0), p = a cos x1, v = 0 solves the system exactly
    a = float(sub["amplitude"])
    c = a * np.cos(spec.coords()[0])
    diag = np.zeros(d)
    diag[0], diag[1] = 1.0, -1.0
    comps = np.stack([diag[i] * c if i == j else np.zeros_like(c) for i, j in sym_pairs(d)])
    comps = np.broadcast_to(comps, (comps.shape[0],) + spec.space_shape)
    st.stress = Field(spec, "symtensor", np.broadcast_to(comps[:, None], st.stress.data.shape).copy())
    p = np.broadcast_to(c, spec.space_shape)
    st.p = Field(spec, "scalar", np.broadcast_to(p[None, None], st.p.data.shape).copy())
    return st


def state_fields(state: SubsolutionState) -> tuple[dict, dict]:
    fields = {"v": state.v, "stress": state.stress, "p": state.p}
    if state.dvdt is not None:
        fields["dvdt"] = state.dvdt
    extra = {"energy": state.energy.tolist(), "gap": state.gap.tolist(), "delta": state.delta}
    return fields, extra


def state_from_fields(fields: dict, header: dict) -> SubsolutionState:
    return SubsolutionState(
        fields["v"],
        fields["stress"],
        fields["p"],
        np.asarray(header["energy"], dtype=float),
        np.asarray(header["gap"], dtype=float),
        float(header.get("delta", 1.0)),
        fields.get("dvdt"),
    )


# ---------------------------------------------------------------- output helpers


def _dump(obj, path: Path | None = None):
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    raise TypeError(f"not serializable: {type(x)}")


def _initial_rows(state: SubsolutionState, schedule, tol: float) -> str:
    inv = state.invariants()
    res = diagnose.euler_reynolds_residual(state, use_stored_derivative=state.dvdt is not None)
    dev, thr, ok = state.energy_band(schedule.contraction)
    rows = [
        diagnose.BoundRow("euler_reynolds_residual", res, tol, res <= tol),
        diagnose.BoundRow("energy_band", dev, thr, ok),
        diagnose.BoundRow("div_v", inv["div_v"], 1e-10, inv["div_v"] <= 1e-10),
        diagnose.BoundRow("trace_stress", inv["trace_stress"], 1e-12, inv["trace_stress"] <= 1e-12),
    ]
    return diagnose.StepReport(0, state.delta, state.delta, 0.0, 0, 0, state.c1_bound, rows).to_csv()


def _step_rows(report: diagnose.StepReport, record: dict) -> str:
    rows = list(report.rows)
    rows.append(diagnose.BoundRow("euler_reynolds_residual", record["residual_max"], record["tolerance"],
                                   record["residual_max"] <= record["tolerance"]))
    return diagnose.StepReport(report.step, report.delta, report.next_delta, report.mollify_scale, report.phase_scale,
                               report.frequency, report.c1_bound, rows).to_csv()


def write_trajectory(out: Path, cfg: RunConfig, traj, tol: float):
    out.mkdir(parents=True, exist_ok=True)
    for n, state in enumerate(traj.states):
        d = out / f"step_{n}"
        d.mkdir(exist_ok=True)
        fields, extra = state_fields(state)
        save_fields(d / "state", state.spec, fields, extra)
        if n == 0:
            csv_text = _initial_rows(state, traj.schedule, tol)
        else:
            csv_text = _step_rows(traj.reports[n - 1], traj.outcomes[n - 1].record)
        (d / "diagnostics.csv").write_text(csv_text)
        if n > 0:
            rec = traj.outcomes[n - 1].record
            summary = {
                "params": traj.outcomes[n - 1].params.to_dict(),
                "report": traj.reports[n - 1].to_dict(),
                "residual_max": rec["residual_max"],
                "terms": rec["terms"],
                "active_classes": rec["active_classes"],
            }
            _dump(summary, d / "step.json")
    _dump({"config": cfg.to_dict(), "schedule": traj.schedule.to_dict()}, out / "schedule.json")


# ---------------------------------------------------------------- commands


def _parse_matrix(text: str) -> np.ndarray:
    p = Path(text)
    raw = p.read_text() if p.exists() else text
    obj = json.loads(raw)
    if isinstance(obj, dict):
        obj = obj["matrix"]
    m = np.asarray(obj, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    return m


def cmd_decompose(args) -> int:
    try:
        m = _parse_matrix(args.matrix)
        d = args.dim or m.shape[0]
        if m.shape != (d, d):
            raise ValueError(f"matrix is not {d} x {d}")
        fams = DirectionFamilies.load(args.families) if args.families else packaged_families(d, 1)
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    inside, margin = in_Md(m)
    if not inside:
        _dump({"admissible": False, "margin": margin, "reason": "outside the admissible cone"}, None)
        return 2
    fam = fams.families[0]
    try:
        gam = gamma_coeffs(m, fam)
    except InadmissibleMatrix as exc:
        _dump({"admissible": False, "margin": exc.margin, "reason": str(exc)}, None)
        return 2
    err = float(np.max(np.abs(reconstruct(gam, d) - 0.5 * (m + m.T))))
    out = {
        "admissible": True,
        "margin": margin,
        "nu": fams.nu,
        "coefficients": [{"k": list(k), "gamma": g, "gamma_sq": g * g} for k, g in sorted(gam.items())],
        "reconstruction_error": err,
    }
    _dump(out, Path(args.out) if args.out else None)
    return 0


def _random_coeffs(d: int, nu: int, rng) -> dict:
    from .matgeom import enumerate_shell

    shell = enumerate_shell(d, nu)
    out = {}
    for k in shell.pairs():
        a = complex(rng.normal(), rng.normal())
        out[tuple(k)] = a
        out[tuple(-c for c in k)] = a.conjugate()
    return out


def stationary_check(d: int, nu: int, n_space: int, draws: int, seed: int) -> dict:
    spec = GridSpec(d, n_space, 1)
    rng = np.random.default_rng(seed)
    res, avg = 0.0, 0.0
    for _ in range(draws):
        coeffs = _random_coeffs(d, nu, rng)
        W, _, Q = assemble_W(coeffs, spec)
        w = W.at(0)
        r = div_outer_arr(w, w, d) + grad_arr(Q.at(0)[0], d)
        res = max(res, float(np.max(np.abs(r))))
        quad = np.array([[np.mean(w[a] * w[b]) for b in range(d)] for a in range(d)])
        avg = max(avg, float(np.max(np.abs(quad - mean_WW(coeffs, d).full))))
    return {"dimension": d, "nu": nu, "n_space": n_space, "draws": draws, "residual": res, "averaging_error": avg}


def cmd_verify_stationary(args) -> int:
    d = args.dim or 2
    nu = args.nu or (5 if d == 2 else 6)
    out = stationary_check(d, nu, args.n_space, args.draws, args.seed)
    tol = 1e-9 if args.tolerance is None else args.tolerance
    out["tolerance"] = tol
    out["passed"] = out["residual"] <= tol and out["averaging_error"] <= 1e-12
    _dump(out, Path(args.out) if args.out else None)
    return 0 if out["passed"] else 4


def _load_config(args) -> RunConfig:
    obj = json.loads(Path(args.config).read_text()) if args.config else {}
    if getattr(args, "dim", None):
        obj["dimension"] = args.dim
    if getattr(args, "out", None):
        obj["out"] = args.out
    if getattr(args, "tolerance", None) is not None:
        obj["tolerance"] = args.tolerance
    return RunConfig.from_dict(obj)


def _run_common(args, force_steps: int | None = None) -> int:
    try:
        cfg = _load_config(args)
        if force_steps is not None:
            cfg.n_steps = force_steps
        if getattr(args, "lambda_list", None):
            cfg.frequencies = args.lambda_list
        for name in ("frequencies", "mollify_scales"):
            lst = getattr(cfg, name)
            if lst is not None and len(lst) < cfg.n_steps:
                raise ValueError(f"{name} needs at least n_steps = {cfg.n_steps} entries")
        fams = cfg.families()
        state = initial_state(cfg)
    except (ValueError, OSError, KeyError, jsonschema.ValidationError, json.JSONDecodeError) as exc:
        print(f"error: {getattr(exc, 'message', exc)}", file=sys.stderr)
        return 1
    try:
        e = cfg.energy_profile(cfg.grid().times())
        sch = init_schedule(e, state, fams, eps=float(cfg.schedule.get("eps", 1.0)),
                            sigma=float(cfg.schedule.get("sigma", 1.0)), overrides=cfg.overrides())
        traj = run(state, sch, fams, cfg.n_steps, cfg.frequencies, cfg.mollify_scales, cfg.tolerance)
    except ResolutionError as exc:
        print(f"error: {exc}; required n_space = {exc.required_n_space}", file=sys.stderr)
        return 3
    except (NotStrong, InadmissibleMatrix, MissingFamily) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StepAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        _dump(exc.breakdown, None)
        return 5
    tol = cfg.tolerance if cfg.tolerance is not None else 1e-6 * (1.0 + state.c1_bound**2)
    write_trajectory(Path(cfg.out), cfg, traj, tol)
    print(f"wrote {cfg.n_steps} step(s) to {cfg.out}")
    return 0


def cmd_run(args) -> int:
    return _run_common(args)


def cmd_step(args) -> int:
    return _run_common(args, force_steps=1)


def cmd_sweep(args) -> int:
    lams = args.lambda_list
    if not lams:
        print("error: --lambda needs at least one frequency", file=sys.stderr)
        return 1
    try:
        cfg = _load_config(args)
        fams = cfg.families()
        state = initial_state(cfg)
    except (ValueError, OSError, KeyError, jsonschema.ValidationError, json.JSONDecodeError) as exc:
        print(f"error: {getattr(exc, 'message', exc)}", file=sys.stderr)
        return 1
    ell = cfg.mollify_scales[0] if cfg.mollify_scales else None
    try:
        e = cfg.energy_profile(cfg.grid().times())
        sch = init_schedule(e, state, fams, eps=float(cfg.schedule.get("eps", 1.0)), overrides=cfg.overrides())
        table = diagnose.lambda_sweep(state, sch, fams, lams, mollify_scale=ell, tolerance=cfg.tolerance)
    except ResolutionError as exc:
        print(f"error: {exc}; required n_space = {exc.required_n_space}", file=sys.stderr)
        return 3
    except (NotStrong, InadmissibleMatrix, MissingFamily) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StepAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.csv").write_text(table.to_csv())
    _dump({"config": cfg.to_dict(), "schedule": sch.to_dict(), "residuals": table.residuals}, out / "schedule.json")
    sys.stdout.write(table.to_csv())
    return 0


def cmd_report(args) -> int:
    root = Path(args.out or ".")
    steps = sorted(root.glob("step_*/diagnostics.csv"), key=lambda p: int(p.parent.name.split("_")[1]))
    if not steps:
        print(f"error: no step_*/diagnostics.csv under {root}", file=sys.stderr)
        return 1
    failed = 0
    for path in steps:
        print(f"[{path.parent.name}]")
        lines = path.read_text().splitlines()
        for line in lines[1:]:
            name, measured, threshold, ok = line.split(",")
            failed += ok != "true"
            print(f"  {name:24s} {float(measured):12.4e} <= {float(threshold):12.4e}  {'pass' if ok == 'true' else 'FAIL'}")
    print(f"{failed} bound(s) not met")
    return 0


def _lambda_list(text: str) -> list[int]:
    text = text.strip()
    if not text:
        return []
    return [int(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eulerci", description="Convex-integration steps for Euler on the torus.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", type=str, default=None)
        p.add_argument("--out", type=str, default=None)
        p.add_argument("--dim", type=int, choices=(2, 3), default=None)
        p.add_argument("--tolerance", type=float, default=None)

    p = sub.add_parser("decompose", help="split a matrix into building-block coefficients")
    p.add_argument("matrix", help="JSON matrix (inline or file path)")
    p.add_argument("--families", type=str, default=None)
    common(p, config=False)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("verify-stationary", help="check stationarity and averaging on random coefficients")
    p.add_argument("--nu", type=int, default=None)
    p.add_argument("--n-space", type=int, default=64)
    p.add_argument("--draws", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    common(p, config=False)
    p.set_defaults(func=cmd_verify_stationary)

    for name, fn, helptext in (("step", cmd_step, "one step"), ("run", cmd_run, "n_steps steps")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--lambda", dest="lambda_list", type=_lambda_list, default=None)
        p.set_defaults(func=fn)

    p = sub.add_parser("sweep", help="one step per frequency from the same slow data")
    common(p)
    p.add_argument("--lambda", dest="lambda_list", type=_lambda_list, default=[8, 16, 32])
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize a trajectory directory")
    p.add_argument("--out", type=str, default=None)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return int(args.func(args))


if __name__ == "__main__":
    sys.exit(main())
