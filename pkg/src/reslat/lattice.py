"""Stochastic spatial model on a 1D or 2D torus.

Updates are random-sequential: each update picks a site uniformly at random
and time advances by 1/(number of sites), so U updates on N sites take
exactly U/N time units. A site of type j becomes type i with probability
a[i, j] N_i / sum_k a[k, j] N_k, where N_k counts type-k neighbours; when
the denominator is zero nothing happens.

Random numbers come from numpy's PCG64 seeded through ``SeedSequence``;
independent streams for replicates are derived with ``spawn_key``
(see ``make_rng``).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import kernels
from .core import Family, InteractionMatrix, ReslatError, ThetaParams, as_simplex, family_matrix

CHUNK = 1 << 18
VOTER_CLUSTERING = {2: 0.86, 3: 0.81}
PALETTE = np.array(
    [(0, 0, 0), (128, 128, 128), (255, 255, 255), (200, 40, 40), (40, 160, 60), (40, 70, 200)],
    dtype=np.uint8,
)


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """PCG64 stream for ``seed``; extra integers select an independent
    child stream (e.g. cell and replicate indices in a sweep)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class LatticeState:
    """Species labels on a torus, stored 0-based (species k+1 is label k)."""

    sites: np.ndarray
    n: int
    updates: int = 0
    frozen_ends: bool = False

    def __post_init__(self):
        self.sites = np.ascontiguousarray(self.sites, dtype=np.int8)
        if self.sites.ndim not in (1, 2):
            raise ReslatError("only 1D and 2D lattices are supported", "BAD_DIMS")
        if self.sites.size and (self.sites.min() < 0 or self.sites.max() >= self.n):
            raise ReslatError("site label out of range", "BAD_LABEL")
        if self.frozen_ends and self.sites.ndim != 1:
            raise ReslatError("frozen ends only apply to 1D segments", "BAD_DIMS")

    @property
    def dims(self) -> tuple[int, ...]:
        return self.sites.shape

    @property
    def size(self) -> int:
        return self.sites.size

    @property
    def time(self) -> float:
        return self.updates / self.size

    def counts(self) -> np.ndarray:
        return np.bincount(self.sites.ravel(), minlength=self.n).astype(np.int64)

    def densities(self) -> np.ndarray:
        return self.counts() / self.size

    def monochromatic(self) -> Optional[int]:
        """1-based species occupying every site, if any."""
        c = self.counts()
        hit = np.flatnonzero(c == self.size)
        return int(hit[0]) + 1 if hit.size else None

    def copy(self) -> LatticeState:
        return LatticeState(self.sites.copy(), self.n, self.updates, self.frozen_ends)


def init_product_measure(dims: Sequence[int] | int, densities, seed: int | np.random.Generator) -> LatticeState:
    """Independent site labels with P(species i) = densities[i]."""
    p = as_simplex(densities)
    dims = (int(dims),) if np.isscalar(dims) else tuple(int(d) for d in dims)
    if len(dims) not in (1, 2) or min(dims) < 1:
        raise ReslatError(f"bad lattice dimensions {dims}", "BAD_DIMS")
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    sites = rng.choice(p.size, size=dims, p=p).astype(np.int8)
    return LatticeState(sites, p.size)


def clustering_coefficient(state: LatticeState | np.ndarray) -> float:
    """Fraction of nearest-neighbour torus edges whose ends share a type."""
    sites = state.sites if isinstance(state, LatticeState) else np.asarray(state)
    same, total = kernels.same_type_edges(sites)
    return same / total


def _check(state: LatticeState, m: InteractionMatrix):
    if m.n != state.n:
        raise ReslatError(f"matrix has n={m.n} but lattice has n={state.n}", "SIZE_MISMATCH")


def _apply(state: LatticeState, m: InteractionMatrix, counts, sites, uniforms) -> int:
    if state.sites.ndim == 2:
        return kernels.lattice_updates_2d(state.sites, m.entries, counts, sites, uniforms)
    return kernels.lattice_updates_1d(
        state.sites, m.entries, counts, sites, uniforms, state.frozen_ends
    )


def advance(
    state: LatticeState,
    m: InteractionMatrix,
    rng: np.random.Generator,
    n_updates: int,
    stop_on_fixation: bool = True,
) -> bool:
    """Apply up to ``n_updates`` updates in place. Returns True if the
    lattice is monochromatic afterwards; with ``stop_on_fixation`` the
    clock stops at the update that fixed it."""
    _check(state, m)
    counts = state.counts()
    if counts.max() == state.size:
        if not stop_on_fixation:
            state.updates += n_updates
        return True
    remaining = int(n_updates)
    while remaining > 0:
        k = min(CHUNK, remaining)
        sites = rng.integers(0, state.size, size=k, dtype=np.int64)
        uniforms = rng.random(k)
        done = _apply(state, m, counts, sites, uniforms)
        state.updates += done
        remaining -= done
        if done < k:
            if stop_on_fixation:
                return True
            # absorbing: the rest of the updates change nothing
            state.updates += remaining
            return True
    return bool(counts.max() == state.size)


def step(state: LatticeState, m: InteractionMatrix, rng: np.random.Generator) -> LatticeState:
    """One update of a uniformly chosen site."""
    _check(state, m)
    counts = state.counts()
    sites = rng.integers(0, state.size, size=1, dtype=np.int64)
    _apply(state, m, counts, sites, rng.random(1))
    state.updates += 1
    return state


def updates_for(t: float, size: int) -> int:
    return int(round(t * size))


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    total_updates: int = 320_000_000
    snapshot_times: tuple[float, ...] = ()
    density_sample_interval: float = 10.0
    stop_on_fixation: bool = True

    def __post_init__(self):
        if self.total_updates < 0:
            raise ReslatError("total_updates must be nonnegative", "BAD_CONFIG")
        if not self.density_sample_interval > 0:
            raise ReslatError("density_sample_interval must be positive", "BAD_CONFIG")
        snaps = tuple(float(t) for t in self.snapshot_times)
        if list(snaps) != sorted(snaps):
            raise ReslatError("snapshot_times must be sorted", "BAD_CONFIG")
        object.__setattr__(self, "snapshot_times", snaps)

    @classmethod
    def for_horizon(cls, t_end: float, size: int, **kw) -> SimConfig:
        return cls(total_updates=updates_for(t_end, size), **kw)

    def to_dict(self):
        return {
            "seed": self.seed,
            "total_updates": self.total_updates,
            "snapshot_times": list(self.snapshot_times),
            "density_sample_interval": self.density_sample_interval,
            "stop_on_fixation": self.stop_on_fixation,
        }


@dataclass
class RunRecord:
    times: np.ndarray
    densities: np.ndarray  # one row per sample, one column per species
    clustering: np.ndarray
    fixation: Optional[tuple[int, float]]  # (1-based species, time)
    dims: tuple[int, ...]
    n: int
    seed: int
    updates_applied: int
    final: Optional[LatticeState] = None
    snapshots: dict[float, np.ndarray] = field(default_factory=dict)

    @property
    def final_densities(self) -> np.ndarray:
        return self.densities[-1]

    @property
    def final_clustering(self) -> float:
        return float(self.clustering[-1])

    @property
    def min_densities(self) -> np.ndarray:
        return self.densities.min(axis=0)

    def survivors(self, cutoff: float = 0.01) -> list[int]:
        return [i + 1 for i, d in enumerate(self.final_densities) if d > cutoff]

    def to_csv(self, path) -> None:
        header = ",".join(["t"] + [f"u{k + 1}" for k in range(self.n)] + ["clustering"])
        data = np.column_stack([self.times, self.densities, self.clustering])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.10g")

    def to_dict(self) -> dict[str, Any]:
        return {
            "dims": list(self.dims),
            "n": self.n,
            "seed": self.seed,
            "updates_applied": self.updates_applied,
            "fixation": None if self.fixation is None
            else {"species": self.fixation[0], "time": self.fixation[1]},
            "final_time": float(self.times[-1]),
            "final_densities": self.final_densities.tolist(),
            "final_clustering": self.final_clustering,
            "min_densities": self.min_densities.tolist(),
            "times": self.times.tolist(),
            "densities": self.densities.tolist(),
            "clustering": self.clustering.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunRecord:
        fx = d.get("fixation")
        return cls(
            times=np.asarray(d["times"], dtype=float),
            densities=np.asarray(d["densities"], dtype=float).reshape(-1, d["n"]),
            clustering=np.asarray(d["clustering"], dtype=float),
            fixation=None if fx is None else (int(fx["species"]), float(fx["time"])),
            dims=tuple(d["dims"]),
            n=int(d["n"]),
            seed=int(d["seed"]),
            updates_applied=int(d["updates_applied"]),
        )

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, s: str) -> RunRecord:
        return cls.from_dict(json.loads(s))


def run(
    state: LatticeState,
    m: InteractionMatrix,
    config: SimConfig,
    rng: np.random.Generator | None = None,
    progress=None,
) -> RunRecord:
    """Run ``config.total_updates`` updates from ``state`` (mutated in place).

    Densities and the clustering coefficient are sampled every
    ``density_sample_interval`` time units and at the end. A run that
    fixes early stops there; the remaining samples repeat the final state.
    ``progress``, if given, is called with the current time at each sample.
    """
    _check(state, m)
    rng = make_rng(config.seed) if rng is None else rng
    size = state.size
    start = state.updates
    end = start + config.total_updates
    step_u = config.density_sample_interval * size
    samples = sorted({start + int(round(k * step_u)) for k in range(int(config.total_updates / step_u) + 1)} | {end})
    samples = [s for s in samples if s <= end]
    snaps = {t: start + updates_for(t, size) for t in config.snapshot_times}
    snaps = {t: u for t, u in snaps.items() if u <= end}
    points = sorted(set(samples) | set(snaps.values()))

    times, dens, clus, shots = [], [], [], {}
    fixation = None
    clock = start  # scheduled position; may run ahead of state.updates after fixation
    for point in points:
        if fixation is None and point > clock:
            fixed = advance(state, m, rng, point - clock, config.stop_on_fixation)
            if fixed:
                sp = state.monochromatic()
                fixation = (sp, state.updates / size)
        clock = point
        if point in samples:
            times.append(point / size)
            dens.append(state.densities())
            clus.append(clustering_coefficient(state))
            if progress is not None:
                progress(point / size)
        for t, u in snaps.items():
            if u == point:
                shots[t] = state.sites.copy()
    if fixation is None and state.monochromatic() is not None:
        fixation = (state.monochromatic(), state.updates / size)
    return RunRecord(
        times=np.asarray(times),
        densities=np.asarray(dens),
        clustering=np.asarray(clus),
        fixation=fixation,
        dims=state.dims,
        n=state.n,
        seed=config.seed,
        updates_applied=state.updates - start,
        final=state,
        snapshots=shots,
    )


@dataclass(frozen=True)
class Outcome:
    kind: str  # DOMINANT, CLUSTERING or COEXISTENCE
    species: Optional[int] = None

    @property
    def name(self) -> str:
        return self.kind if self.species is None else f"{self.kind}({self.species})"


def classify_outcome(record: RunRecord, n: int | None = None, threshold: float | None = None) -> Outcome:
    """Fixation -> DOMINANT; otherwise compare the final clustering
    coefficient with the voter-model baseline (0.86 for two types, 0.81
    for three)."""
    n = record.n if n is None else n
    if record.fixation is not None:
        return Outcome("DOMINANT", record.fixation[0])
    if threshold is None:
        if n not in VOTER_CLUSTERING:
            raise ReslatError(f"no voter baseline for n={n}; pass a threshold", "NO_BASELINE")
        threshold = VOTER_CLUSTERING[n]
    if record.final_clustering >= threshold:
        return Outcome("CLUSTERING")
    return Outcome("COEXISTENCE")


# ---------------------------------------------------------------- 1D interface


@dataclass
class InterfaceSeries:
    times: np.ndarray
    displacement: np.ndarray

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([self.times, self.displacement]), delimiter=",",
                   header="t,displacement", comments="", fmt="%.10g")


def run_1d_interface(
    theta1: float,
    theta2: float,
    L: int = 1000,
    t_end: float = 100.0,
    seed: int | np.random.Generator = 0,
    sample_interval: float = 1.0,
) -> InterfaceSeries:
    """Interface between a block of type 1 (left half) and type 2 (right
    half) on a segment with frozen end sites.

    Displacement is measured at the midpoint between the rightmost type-1
    site and the leftmost type-2 site; positive means type 1 advanced.
    """
    if L < 4 or L % 2:
        raise ReslatError("L must be even and at least 4", "BAD_DIMS")
    m = family_matrix(ThetaParams(Family.TWO_TYPE, (theta1, theta2)))
    sites = np.ones(L, dtype=np.int8)
    sites[: L // 2] = 0
    state = LatticeState(sites, 2, frozen_ends=True)
    rng = seed if isinstance(seed, np.random.Generator) else make_rng(seed)
    origin = L / 2 - 0.5
    k_max = int(math.floor(t_end / sample_interval + 1e-9))
    times = np.arange(k_max + 1) * sample_interval
    disp = np.empty(k_max + 1)
    idx = np.arange(L)
    for k, t in enumerate(times):
        target = updates_for(t, L)
        if target > state.updates:
            advance(state, m, rng, target - state.updates, stop_on_fixation=False)
        right1 = idx[state.sites == 0].max()
        left2 = idx[state.sites == 1].min()
        disp[k] = 0.5 * (right1 + left2) - origin
    return InterfaceSeries(times, disp)


# ---------------------------------------------------------------- images


def snapshot(state: LatticeState | np.ndarray) -> np.ndarray:
    """RGB image (rows, cols, 3) with one pixel per site."""
    sites = state.sites if isinstance(state, LatticeState) else np.asarray(state)
    if sites.ndim == 1:
        sites = sites[None, :]
    if sites.max(initial=0) >= len(PALETTE):
        raise ReslatError("palette covers at most six species", "BAD_LABEL")
    return PALETTE[sites]


def write_ppm(path, image: np.ndarray) -> None:
    img = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = img.shape[:2]
    with open(Path(path), "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    hdr = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if hdr is None:
        raise ReslatError("not a binary PPM file", "PARSE_ERROR")
    w, h, maxval = (int(x) for x in hdr.groups())
    if maxval != 255:
        raise ReslatError("only 8-bit PPM is supported", "PARSE_ERROR")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=hdr.end())
    return pixels.reshape(h, w, 3)
