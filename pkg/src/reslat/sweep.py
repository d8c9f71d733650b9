"""Regime maps over theta-space and replicated invasion experiments.

Every (cell, replicate) pair is an independent work item whose random
stream is ``make_rng(base_seed, cell, replicate)``, so a map does not
depend on how many workers ran it or in which order they finished.
"""

from __future__ import annotations

import enum
import itertools
import json
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .core import (
    Family,
    InteractionMatrix,
    Regime,
    RegimeReport,
    ReslatError,
    ThetaParams,
    family_matrix,
)
from .lattice import (
    SimConfig,
    classify_outcome,
    init_product_measure,
    make_rng,
    run,
    updates_for,
    write_ppm,
)
from .meanfield import classify

SURVIVAL_CUTOFF = 0.01


class Mode(str, enum.Enum):
    MEANFIELD = "MEANFIELD"
    LATTICE = "LATTICE"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("RESLAT_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SweepSpec:
    """Grid over theta. ``grid`` has one (min, max, count) triple per theta
    coordinate; a count of 1 pins that coordinate at ``min``."""

    family: Family
    grid: tuple[tuple[float, float, int], ...]
    mode: Mode = Mode.MEANFIELD
    replicates: int = 3
    dims: tuple[int, ...] = (200, 200)
    t_end: float = 1000.0
    base_seed: int = 0
    sample_interval: float = 10.0

    def __post_init__(self):
        fam = Family.parse(self.family)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "mode", Mode(self.mode))
        grid = tuple((float(lo), float(hi), int(c)) for lo, hi, c in self.grid)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        errs = []
        if len(grid) != fam.size:
            errs.append(f"family {fam.value} needs {fam.size} grid axes, got {len(grid)}")
        for k, (lo, hi, c) in enumerate(grid):
            if c < 1:
                errs.append(f"axis {k + 1}: count must be at least 1")
            if not (0.0 <= lo <= 1.0 and 0.0 <= hi <= 1.0):
                errs.append(f"axis {k + 1}: bounds must lie in [0, 1]")
            if lo > hi:
                errs.append(f"axis {k + 1}: min exceeds max")
        if self.replicates < 1:
            errs.append("replicates must be at least 1")
        if not self.t_end > 0:
            errs.append("t_end must be positive")
        if not self.dims or min(self.dims) < 1:
            errs.append("lattice dimensions must be positive")
        if errs:
            raise ReslatError("; ".join(errs), "VALIDATION_ERROR")

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, c) if c > 1 else np.array([lo]) for lo, hi, c in self.grid]

    def cells(self) -> list[tuple[float, ...]]:
        return [tuple(float(x) for x in p) for p in itertools.product(*self.axes())]

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": self.family.value,
            "grid": [list(g) for g in self.grid],
            "mode": self.mode.value,
            "replicates": self.replicates,
            "dims": list(self.dims),
            "t_end": self.t_end,
            "base_seed": self.base_seed,
            "sample_interval": self.sample_interval,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SweepSpec:
        return cls(
            family=d["family"],
            grid=tuple(tuple(g) for g in d["grid"]),
            mode=d.get("mode", "MEANFIELD"),
            replicates=d.get("replicates", 3),
            dims=tuple(d.get("dims", (200, 200))),
            t_end=d.get("t_end", 1000.0),
            base_seed=d.get("base_seed", 0),
            sample_interval=d.get("sample_interval", 10.0),
        )


@dataclass
class Cell:
    theta: tuple[float, ...]
    report: Optional[RegimeReport] = None  # mean-field mode
    tally: dict[str, int] = field(default_factory=dict)  # lattice mode
    survivors: dict[str, int] = field(default_factory=dict)
    mean_densities: Optional[list[float]] = None
    min_densities: Optional[list[float]] = None
    mean_clustering: Optional[float] = None

    @property
    def label(self) -> str:
        if self.report is not None:
            return self.report.name
        # majority outcome; ties go to the alphabetically first name
        best = max(self.tally.values())
        return sorted(k for k, v in self.tally.items() if v == best)[0]

    @property
    def degenerate(self) -> bool:
        return self.report is not None and self.report.label is Regime.DEGENERATE

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"theta": list(self.theta), "label": self.label}
        if self.report is not None:
            d["report"] = self.report.to_dict()
        else:
            d.update(
                tally=self.tally,
                survivors=self.survivors,
                mean_densities=self.mean_densities,
                min_densities=self.min_densities,
                mean_clustering=self.mean_clustering,
            )
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Cell:
        rep = d.get("report")
        return cls(
            theta=tuple(d["theta"]),
            report=None if rep is None else RegimeReport.from_dict(rep),
            tally=dict(d.get("tally", {})),
            survivors=dict(d.get("survivors", {})),
            mean_densities=d.get("mean_densities"),
            min_densities=d.get("min_densities"),
            mean_clustering=d.get("mean_clustering"),
        )


@dataclass
class RegimeMap:
    spec: SweepSpec
    cells: list[Cell]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(c for _, _, c in self.spec.grid)

    def labels(self) -> np.ndarray:
        return np.array([c.label for c in self.cells], dtype=object).reshape(self.shape)

    def cell_at(self, theta: Sequence[float], tol: float = 1e-9) -> Cell:
        for c in self.cells:
            if np.allclose(c.theta, theta, atol=tol, rtol=0):
                return c
        raise KeyError(tuple(theta))

    def to_dict(self) -> dict[str, Any]:
        return {"spec": self.spec.to_dict(), "cells": [c.to_dict() for c in self.cells]}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RegimeMap:
        return cls(SweepSpec.from_dict(d["spec"]), [Cell.from_dict(c) for c in d["cells"]])

    @classmethod
    def from_json(cls, s: str) -> RegimeMap:
        return cls.from_dict(json.loads(s))

    def to_csv(self, path) -> None:
        k = self.spec.family.size
        cols = [f"theta{i + 1}" for i in range(k)] + ["label", "degenerate", "tally"]
        cols += [f"mean_u{i + 1}" for i in range(k)] + ["mean_clustering"]
        lines = [",".join(cols)]
        for c in self.cells:
            tally = ";".join(f"{name}={v}" for name, v in sorted(c.tally.items()))
            dens = c.mean_densities or [""] * k
            clus = "" if c.mean_clustering is None else f"{c.mean_clustering:.10g}"
            row = [f"{t:.10g}" for t in c.theta] + [c.label, str(int(c.degenerate)), tally]
            row += [x if x == "" else f"{x:.10g}" for x in dens] + [clus]
            lines.append(",".join(row))
        with open(path, "w") as f:
            f.write("\n".join(lines) + "\n")

    def raster(self) -> np.ndarray:
        """RGB image with one pixel per cell (2D grids only); rows run
        along the first varying axis, columns along the second."""
        shape = [c for c in self.shape if c > 1]
        if len(shape) > 2:
            raise ReslatError("rasters need at most two varying axes", "BAD_DIMS")
        while len(shape) < 2:
            shape.append(1)
        names = sorted({c.label for c in self.cells})
        colors = {name: _label_color(name) for name in names}
        img = np.array([colors[c.label] for c in self.cells], dtype=np.uint8)
        return img.reshape(shape[0], shape[1], 3)

    def to_ppm(self, path) -> None:
        write_ppm(path, self.raster())


_COLORS = {
    "CHEATER_WINS(1)": (0, 0, 0),
    "CHEATER_WINS(2)": (128, 128, 128),
    "CHEATER_WINS(3)": (255, 255, 255),
    "DOMINANT(1)": (0, 0, 0),
    "DOMINANT(2)": (128, 128, 128),
    "DOMINANT(3)": (255, 255, 255),
    "BISTABLE": (200, 40, 40),
    "COOPERATION_COEXIST": (40, 160, 60),
    "COEXISTENCE": (40, 160, 60),
    "CLUSTERING": (200, 40, 40),
    "TRISTABLE": (200, 40, 40),
    "HETEROCLINIC_STABLE": (230, 150, 30),
    "BOUNDARY_STABLE": (150, 60, 160),
    "DEGENERATE": (255, 0, 255),
    "UNCLASSIFIED": (60, 200, 220),
}


def _label_color(name: str) -> tuple[int, int, int]:
    if name in _COLORS:
        return _COLORS[name]
    if name.startswith("PERMANENT_CASE") or name.startswith("HETEROCLINIC_REPELLING"):
        return (40, 160, 60)
    # stable colour for anything else
    h = sum(ord(ch) * (i + 1) for i, ch in enumerate(name))
    return (h % 256, (h // 7) % 256, (h // 49) % 256)


def _meanfield_cell(family: Family, theta: tuple[float, ...]) -> Cell:
    try:
        report = classify(family_matrix(ThetaParams(family, theta)))
    except ReslatError as e:
        report = RegimeReport(Regime.DEGENERATE, evidence={"error": e.code, "message": str(e)})
    return Cell(theta, report=report)


def _lattice_task(args) -> dict[str, Any]:
    # top-level so that it pickles for worker processes
    entries, dims, t_end, interval, base_seed, cell, rep, init = args
    m = InteractionMatrix(entries)
    rng = make_rng(base_seed, cell, rep)
    state = init_product_measure(dims, init, rng)
    size = int(np.prod(dims))
    cfg = SimConfig(seed=base_seed, total_updates=updates_for(t_end, size),
                    density_sample_interval=interval)
    rec = run(state, m, cfg, rng=rng)
    return {
        "cell": cell,
        "rep": rep,
        "outcome": classify_outcome(rec).name,
        "fixation": rec.fixation,
        "final": rec.final_densities.tolist(),
        "min": rec.min_densities.tolist(),
        "clustering": rec.final_clustering,
    }


def run_tasks(tasks: list, threads: int = 1) -> list[dict[str, Any]]:
    """Run lattice tasks serially or on a process pool; results come back
    sorted by (cell, replicate) whatever the completion order."""
    if threads <= 1 or len(tasks) <= 1:
        out = [_lattice_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            out = list(ex.map(_lattice_task, tasks, chunksize=1))
    return sorted(out, key=lambda r: (r["cell"], r["rep"]))


def _lattice_cells(spec: SweepSpec, threads: int) -> list[Cell]:
    thetas = spec.cells()
    n = spec.family.size
    init = [1.0 / n] * n
    tasks = []
    for ci, th in enumerate(thetas):
        entries = family_matrix(ThetaParams(spec.family, th)).entries.tolist()
        for r in range(spec.replicates):
            tasks.append((entries, spec.dims, spec.t_end, spec.sample_interval,
                          spec.base_seed, ci, r, init))
    results = run_tasks(tasks, threads)
    cells = []
    for ci, th in enumerate(thetas):
        rs = [r for r in results if r["cell"] == ci]
        tally = Counter(r["outcome"] for r in rs)
        surv = Counter(
            ",".join(str(i + 1) for i, d in enumerate(r["final"]) if d > SURVIVAL_CUTOFF)
            for r in rs
        )
        cells.append(Cell(
            theta=th,
            tally=dict(sorted(tally.items())),
            survivors=dict(sorted(surv.items())),
            mean_densities=np.mean([r["final"] for r in rs], axis=0).tolist(),
            min_densities=np.min([r["min"] for r in rs], axis=0).tolist(),
            mean_clustering=float(np.mean([r["clustering"] for r in rs])),
        ))
    return cells


def sweep(spec: SweepSpec, threads: int | None = None) -> RegimeMap:
    threads = default_threads() if threads is None else threads
    if spec.mode is Mode.MEANFIELD:
        cells = [_meanfield_cell(spec.family, th) for th in spec.cells()]
    else:
        cells = _lattice_cells(spec, threads)
    return RegimeMap(spec, cells)


def _require(spec: SweepSpec, family: Family):
    if spec.family is not family:
        raise ReslatError(
            f"this sweep needs family {family.value}, got {spec.family.value}", "VALIDATION_ERROR"
        )


def two_type_diagram(spec: SweepSpec, threads: int | None = None) -> RegimeMap:
    _require(spec, Family.TWO_TYPE)
    return sweep(spec, threads)


def m8_cube_sweep(spec: SweepSpec, threads: int | None = None) -> RegimeMap:
    _require(spec, Family.M8)
    return sweep(spec, threads)


def m9_slice_sweep(spec: SweepSpec, threads: int | None = None) -> RegimeMap:
    _require(spec, Family.M9)
    if spec.grid[2][2] != 1:
        raise ReslatError("the M9 slice keeps theta3 fixed (count 1)", "VALIDATION_ERROR")
    return sweep(spec, threads)


@dataclass
class InvasionResult:
    invader: int
    initial_density: float
    replicates: int
    wins: int
    fixations: dict[str, int]
    fixation_times: list[Optional[float]]

    @property
    def frequency(self) -> float:
        return self.wins / self.replicates

    def to_dict(self) -> dict[str, Any]:
        return {
            "invader": self.invader,
            "initial_density": self.initial_density,
            "replicates": self.replicates,
            "wins": self.wins,
            "frequency": self.frequency,
            "fixations": self.fixations,
            "fixation_times": self.fixation_times,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> InvasionResult:
        return cls(d["invader"], d["initial_density"], d["replicates"], d["wins"],
                   dict(d["fixations"]), list(d["fixation_times"]))

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, s: str) -> InvasionResult:
        return cls.from_dict(json.loads(s))


def invasion_experiment(
    m: InteractionMatrix,
    invader: int,
    initial_density: float = 0.05,
    replicates: int = 20,
    dims: Sequence[int] = (200, 200),
    t_end: float = 1000.0,
    base_seed: int = 0,
    threads: int | None = None,
) -> InvasionResult:
    """Start the 1-based ``invader`` at ``initial_density`` (others share
    the rest equally) and count how often it takes over the lattice."""
    if not 1 <= invader <= m.n:
        raise ReslatError(f"invader must be in 1..{m.n}", "VALIDATION_ERROR")
    if not 0.0 < initial_density < 1.0:
        raise ReslatError("initial_density must lie in (0, 1)", "VALIDATION_ERROR")
    if replicates < 1:
        raise ReslatError("replicates must be at least 1", "VALIDATION_ERROR")
    threads = default_threads() if threads is None else threads
    init = [(1.0 - initial_density) / (m.n - 1)] * m.n
    init[invader - 1] = initial_density
    dims = tuple(int(d) for d in dims)
    tasks = [(m.entries.tolist(), dims, t_end, t_end, base_seed, 0, r, init)
             for r in range(replicates)]
    results = run_tasks(tasks, threads)
    fix = Counter(str(r["fixation"][0]) for r in results if r["fixation"] is not None)
    wins = sum(1 for r in results if r["fixation"] is not None and r["fixation"][0] == invader)
    return InvasionResult(
        invader=invader,
        initial_density=initial_density,
        replicates=replicates,
        wins=wins,
        fixations=dict(sorted(fix.items())),
        fixation_times=[None if r["fixation"] is None else r["fixation"][1] for r in results],
    )
