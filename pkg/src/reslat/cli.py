"""Command-line front end.

    reslat classify --matrix M0
    reslat odesolve --matrix M6 --u0 0.9,0.1 --out run1
    reslat simulate --matrix voter --dims 400x400 --seed 1 --out run2
    reslat sweep --family M9 --grid 0:1:11,0:1:11,0.8:0.8:1 --out map
    reslat invade --matrix M4:0.1 --invader 2 --out inv
    reslat interface1d --theta 0.5,0.5 --replicates 20 --out iface

Options may also come from a JSON file given with ``--config``; flags
override file values. Errors are printed to stderr as JSON and the exit
status is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import lattice, meanfield, sweep
from .core import (
    Family,
    InteractionMatrix,
    ReslatError,
    ThetaParams,
    builtin_matrix,
    family_matrix,
)

COMMANDS = ("simulate", "odesolve", "classify", "sweep", "invade", "interface1d")

# per-command defaults for keys the user did not set
_DEFAULTS = {
    "simulate": {"dims": (400, 400)},
    "odesolve": {"t_end": 100.0},
    "sweep": {"dims": (200, 200), "t_end": 1000.0},
    "invade": {"dims": (200, 200), "t_end": 1000.0},
    "interface1d": {"t_end": 100.0},
}


class ConfigError(ReslatError):
    def __init__(self, message: str, code: str, violations: Sequence[str] = ()):
        super().__init__(message, code)
        self.violations = list(violations)

    def to_dict(self):
        d = super().to_dict()
        if self.violations:
            d["violations"] = self.violations
        return d


@dataclass
class JobConfig:
    cmd: str
    matrix: Optional[InteractionMatrix] = None
    family: Optional[Family] = None
    theta: Optional[tuple[float, ...]] = None
    dims: Optional[tuple[int, ...]] = None
    seed: int = 0
    updates: Optional[int] = None
    t_end: Optional[float] = None
    out: Optional[Path] = None
    threads: int = field(default_factory=sweep.default_threads)
    snapshot_times: tuple[float, ...] = ()
    u0: Optional[tuple[float, ...]] = None
    densities: Optional[tuple[float, ...]] = None
    step: float = 0.01
    sample_interval: float = 10.0
    grid: Optional[tuple[tuple[float, float, int], ...]] = None
    mode: str = "MEANFIELD"
    replicates: Optional[int] = None
    invader: int = 2
    initial_density: float = 0.05
    length: int = 1000
    progress: float = 0.0

    def resolved_matrix(self) -> InteractionMatrix:
        if self.matrix is not None:
            return self.matrix
        return family_matrix(ThetaParams(self.family, self.theta))

    def horizon_updates(self, size: int) -> int:
        if self.updates is not None:
            return self.updates
        return lattice.updates_for(self.t_end, size)


# ---------------------------------------------------------------- parsing


def _floats(v, what: str) -> tuple[float, ...]:
    if isinstance(v, str):
        v = [x for x in v.replace(" ", "").split(",") if x]
    try:
        return tuple(float(x) for x in v)
    except (TypeError, ValueError):
        raise ValueError(f"{what}: expected a list of numbers, got {v!r}")


def _dims(v) -> tuple[int, ...]:
    if isinstance(v, str):
        v = v.lower().split("x")
    try:
        d = tuple(int(x) for x in ([v] if isinstance(v, int) else v))
    except (TypeError, ValueError):
        raise ValueError(f"dims: expected LxL or a list of integers, got {v!r}")
    if not d or len(d) > 2 or min(d) < 1:
        raise ValueError(f"dims: need one or two positive sizes, got {v!r}")
    return d


def _grid(v) -> tuple[tuple[float, float, int], ...]:
    if isinstance(v, str):
        v = [axis.split(":") for axis in v.split(",")]
    out = []
    for axis in v:
        if len(axis) != 3:
            raise ValueError(f"grid: each axis needs min:max:count, got {axis!r}")
        out.append((float(axis[0]), float(axis[1]), int(axis[2])))
    return tuple(out)


def parse_matrix(v) -> InteractionMatrix:
    """Named matrix ("M0", "M4:0.1", "M8:0.1,0.2,0.3", "voter:3"), a JSON
    string, a nested list or {"n", "entries"}."""
    if isinstance(v, InteractionMatrix):
        return v
    if isinstance(v, str):
        s = v.strip()
        if s[:1] in "[{":
            try:
                v = json.loads(s)
            except json.JSONDecodeError as e:
                raise ConfigError(f"matrix JSON: {e.msg} at line {e.lineno} column {e.colno}",
                                  "PARSE_ERROR")
        else:
            name, _, arg = s.partition(":")
            if name in ("M4", "M5"):
                return builtin_matrix(name, eps=float(arg) if arg else None)
            if name in ("M8", "M9"):
                return builtin_matrix(name, theta=_floats(arg, "theta") if arg else None)
            if name.lower() == "voter":
                return builtin_matrix(name, n=int(arg) if arg else 2)
            return builtin_matrix(name)
    if isinstance(v, dict):
        return InteractionMatrix.from_dict(v)
    return InteractionMatrix(v)


def _load_file(path) -> dict[str, Any]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}", "PARSE_ERROR")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: {e.msg} at line {e.lineno} column {e.colno}", "PARSE_ERROR")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object", "PARSE_ERROR")
    return data


_KEYS = {
    "cmd", "matrix", "family", "theta", "dims", "seed", "updates", "t_end", "out", "threads",
    "snapshot_times", "u0", "densities", "step", "sample_interval", "grid", "mode",
    "replicates", "invader", "initial_density", "length", "progress",
}


def parse_config(config: Optional[dict[str, Any] | str | Path] = None, **flags) -> JobConfig:
    """Build a validated job from a config (dict or JSON file path) and
    flag overrides; ``None`` flags are ignored. Every violation is
    collected before raising VALIDATION_ERROR."""
    raw: dict[str, Any] = {}
    if isinstance(config, dict):
        raw.update(config)
    elif config is not None:
        raw.update(_load_file(config))
    raw.update({k: v for k, v in flags.items() if v is not None})

    errs: list[str] = []
    unknown = sorted(set(raw) - _KEYS)
    if unknown:
        errs.append(f"unknown keys: {', '.join(unknown)}")
    cmd = raw.get("cmd")
    if cmd not in COMMANDS:
        errs.append(f"cmd: must be one of {', '.join(COMMANDS)}, got {cmd!r}")
        raise ConfigError("invalid job", "VALIDATION_ERROR", errs)
    for k, v in _DEFAULTS.get(cmd, {}).items():
        raw.setdefault(k, v)
    if cmd == "simulate" and raw.get("updates") is None and raw.get("t_end") is None:
        raw["updates"] = 320_000_000

    job = JobConfig(cmd=cmd)

    def take(key, conv):
        if key in raw and raw[key] is not None:
            try:
                setattr(job, key, conv(raw[key]))
            except ReslatError as e:
                errs.append(f"{key}: {e}")
            except (TypeError, ValueError) as e:
                errs.append(str(e) if str(e).startswith(key) else f"{key}: {e}")

    take("matrix", parse_matrix)
    fam = raw.get("family")
    if isinstance(fam, dict):
        # {"family": "M8", "theta": [...]}
        raw.setdefault("theta", fam.get("theta"))
        fam = fam.get("family")
    if fam is not None:
        try:
            job.family = Family.parse(fam)
        except ReslatError as e:
            errs.append(f"family: {e}")
    take("theta", lambda v: _floats(v, "theta"))
    take("dims", _dims)
    take("seed", int)
    take("updates", int)
    take("t_end", float)
    take("out", Path)
    take("threads", int)
    take("snapshot_times", lambda v: tuple(sorted(_floats(v, "snapshot_times"))))
    take("u0", lambda v: _floats(v, "u0"))
    take("densities", lambda v: _floats(v, "densities"))
    take("step", float)
    take("sample_interval", float)
    take("grid", _grid)
    take("mode", lambda v: sweep.Mode(str(v).upper()).value)
    take("replicates", int)
    take("invader", int)
    take("initial_density", float)
    take("length", int)
    take("progress", float)

    _validate(job, errs, matrix_given=raw.get("matrix") is not None)
    if errs:
        raise ConfigError("invalid job: " + "; ".join(errs), "VALIDATION_ERROR", errs)
    return job


def _validate(job: JobConfig, errs: list[str], matrix_given: bool = False):
    cmd = job.cmd
    if job.seed < 0:
        errs.append("seed: must be nonnegative")
    if job.threads < 1:
        errs.append("threads: must be at least 1")
    if job.updates is not None and job.updates < 0:
        errs.append("updates: must be nonnegative")
    if job.t_end is not None and not job.t_end > 0:
        errs.append("t_end: must be positive")
    if job.replicates is not None and job.replicates < 1:
        errs.append("replicates: must be at least 1")

    needs_matrix = cmd in ("simulate", "odesolve", "classify", "invade")
    if needs_matrix:
        if job.matrix is not None and job.family is not None:
            errs.append("matrix and family are mutually exclusive")
        elif job.matrix is None and job.family is None and not matrix_given:
            errs.append("give either matrix or family with theta")
        elif job.family is not None:
            if job.theta is None:
                errs.append("family needs theta")
            else:
                try:
                    ThetaParams(job.family, job.theta)
                except ReslatError as e:
                    errs.append(f"theta: {e}")
    if cmd == "sweep":
        if job.matrix is not None:
            errs.append("sweep takes a family and grid, not a matrix")
        if job.family is None:
            errs.append("sweep needs family")
        if job.grid is None:
            errs.append("sweep needs grid")
        elif job.family is not None and len(job.grid) != job.family.size:
            errs.append(f"grid: family {job.family.value} needs {job.family.size} axes")
    if cmd == "interface1d":
        if job.theta is None or len(job.theta) != 2:
            errs.append("interface1d needs theta with two values")
        elif not all(0.0 <= t <= 1.0 for t in job.theta):
            errs.append("theta: values must lie in [0, 1]")
        if job.length < 4 or job.length % 2:
            errs.append("length: must be even and at least 4")

    n = None
    if needs_matrix and (job.matrix is not None or job.family is not None):
        n = job.matrix.n if job.matrix is not None else job.family.size
    for key in ("u0", "densities"):
        v = getattr(job, key)
        if v is None:
            continue
        if n is not None and len(v) != n:
            errs.append(f"{key}: need {n} values, got {len(v)}")
        elif any(x < 0 for x in v) or abs(sum(v) - 1.0) > 1e-9:
            errs.append(f"{key}: must be nonnegative and sum to 1")
    if cmd == "invade" and n is not None:
        if not 1 <= job.invader <= n:
            errs.append(f"invader: must be in 1..{n}")
        if not 0.0 < job.initial_density < 1.0:
            errs.append("initial_density: must lie in (0, 1)")
    if cmd == "odesolve" and not job.step > 0:
        errs.append("step: must be positive")
    if not job.sample_interval > 0:
        errs.append("sample_interval: must be positive")


# ---------------------------------------------------------------- commands


DEFAULT_OUT = Path("reslat_out")


def _out_path(job: JobConfig, name: str) -> Path:
    out = job.out if job.out is not None else DEFAULT_OUT
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _progress(job: JobConfig):
    if job.progress <= 0:
        return None
    last = [-np.inf]

    def report(t):
        if t - last[0] >= job.progress:
            last[0] = t
            print(json.dumps({"progress": t}), file=sys.stderr, flush=True)

    return report


def _simulate(job: JobConfig) -> int:
    m = job.resolved_matrix()
    dens = job.densities or tuple([1.0 / m.n] * m.n)
    rng = lattice.make_rng(job.seed)
    state = lattice.init_product_measure(job.dims, dens, rng)
    cfg = lattice.SimConfig(
        seed=job.seed,
        total_updates=job.horizon_updates(state.size),
        snapshot_times=job.snapshot_times,
        density_sample_interval=job.sample_interval,
    )
    rec = lattice.run(state, m, cfg, rng=rng, progress=_progress(job))
    rec.to_csv(_out_path(job, "densities.csv"))
    lattice.write_ppm(_out_path(job, "final.ppm"), lattice.snapshot(rec.final))
    for t, sites in rec.snapshots.items():
        lattice.write_ppm(_out_path(job, f"snapshot_t{t:g}.ppm"), lattice.snapshot(sites))
    meta = {
        "matrix": m.to_dict(),
        "config": cfg.to_dict(),
        "initial_densities": list(dens),
        "outcome": lattice.classify_outcome(rec).name if m.n in lattice.VOTER_CLUSTERING
        or rec.fixation is not None else None,
        "record": rec.to_dict(),
    }
    _write_json(_out_path(job, "run.json"), meta)
    return 0


def _odesolve(job: JobConfig) -> int:
    m = job.resolved_matrix()
    u0 = job.u0 or tuple([1.0 / m.n] * m.n)
    traj = meanfield.integrate(m, u0, job.t_end, step=job.step)
    traj.to_csv(_out_path(job, "trajectory.csv"))
    return 0


def _classify(job: JobConfig) -> int:
    report = meanfield.classify(job.resolved_matrix())
    text = report.to_json(sort_keys=True)
    print(text)
    if job.out is not None:
        (_out_path(job, "report.json")).write_text(text + "\n")
    return 0


def _sweep(job: JobConfig) -> int:
    spec = sweep.SweepSpec(
        family=job.family,
        grid=job.grid,
        mode=job.mode,
        replicates=job.replicates or 3,
        dims=job.dims,
        t_end=job.t_end,
        base_seed=job.seed,
        sample_interval=job.sample_interval,
    )
    rmap = sweep.sweep(spec, threads=job.threads)
    rmap.to_csv(_out_path(job, "regime_map.csv"))
    _write_json(_out_path(job, "regime_map.json"), rmap.to_dict())
    if sum(c > 1 for c in rmap.shape) <= 2:
        rmap.to_ppm(_out_path(job, "regime_map.ppm"))
    return 0


def _invade(job: JobConfig) -> int:
    res = sweep.invasion_experiment(
        job.resolved_matrix(),
        job.invader,
        initial_density=job.initial_density,
        replicates=job.replicates or 20,
        dims=job.dims,
        t_end=job.t_end,
        base_seed=job.seed,
        threads=job.threads,
    )
    _write_json(_out_path(job, "invasion.json"), res.to_dict())
    return 0


def _interface1d(job: JobConfig) -> int:
    reps = job.replicates or 1
    series = [
        lattice.run_1d_interface(*job.theta, L=job.length, t_end=job.t_end,
                                 seed=lattice.make_rng(job.seed, r))
        for r in range(reps)
    ]
    if reps == 1:
        series[0].to_csv(_out_path(job, "interface.csv"))
        return 0
    header = ",".join(["t"] + [f"run{r + 1}" for r in range(reps)])
    data = np.column_stack([series[0].times] + [s.displacement for s in series])
    np.savetxt(_out_path(job, "interface.csv"), data, delimiter=",", header=header,
               comments="", fmt="%.10g")
    return 0


_HANDLERS = {
    "simulate": _simulate,
    "odesolve": _odesolve,
    "classify": _classify,
    "sweep": _sweep,
    "invade": _invade,
    "interface1d": _interface1d,
}


def dispatch(job: JobConfig) -> int:
    """Run a job; artifacts go under ``job.out`` only."""
    return _HANDLERS[job.cmd](job)


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reslat", description="Resource-exploitation lattice models.")
    p.add_argument("cmd", choices=COMMANDS, nargs="?")
    p.add_argument("--config", help="JSON job file; flags override its values")
    p.add_argument("--matrix", help="name (M0..M9, voter, M4:0.1) or JSON entries")
    p.add_argument("--theta", help="comma-separated theta values")
    p.add_argument("--family", help="M8, M9 or two")
    p.add_argument("--dims", help="lattice size, e.g. 400x400 or 1000")
    p.add_argument("--seed", type=int)
    p.add_argument("--updates", type=int, help="number of lattice updates")
    p.add_argument("--t-end", dest="t_end", type=float, help="time horizon")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker processes (default $RESLAT_THREADS or 1)")
    p.add_argument("--snapshot-times", dest="snapshot_times", help="comma-separated times")
    p.add_argument("--u0", help="initial densities for odesolve")
    p.add_argument("--densities", help="initial product-measure densities for simulate")
    p.add_argument("--step", type=float, help="RK4 step for odesolve")
    p.add_argument("--sample-interval", dest="sample_interval", type=float)
    p.add_argument("--grid", help="sweep axes as min:max:count,...")
    p.add_argument("--mode", help="sweep mode: meanfield or lattice")
    p.add_argument("--replicates", type=int)
    p.add_argument("--invader", type=int)
    p.add_argument("--initial-density", dest="initial_density", type=float)
    p.add_argument("--length", type=int, help="segment length for interface1d")
    p.add_argument("--progress", type=float, help="report progress to stderr every X time units")
    return p


def _fail(err: ReslatError) -> int:
    print(json.dumps(err.to_dict()), file=sys.stderr)
    return 2


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = vars(build_parser().parse_args(argv))
    config = args.pop("config")
    try:
        job = parse_config(config, **args)
        return dispatch(job)
    except ReslatError as e:
        return _fail(e)
    except OSError as e:
        return _fail(ReslatError(f"{e.filename}: {e.strerror}", "IO_ERROR"))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
