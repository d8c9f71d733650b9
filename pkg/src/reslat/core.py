"""Shared domain types: interaction matrices, theta families, regime reports."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

# absolute tolerance for every strict comparison between abilities
TOL = 1e-12
SIMPLEX_TOL = 1e-9


class ReslatError(ValueError):
    """Base error; ``code`` is the machine-readable error name."""

    code = "ERROR"

    def __init__(self, message: str, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code

    def to_dict(self) -> dict[str, str]:
        return {"error": self.code, "message": str(self)}


class MatrixError(ReslatError):
    code = "INVALID_MATRIX"


class UnknownMatrixError(ReslatError):
    code = "UNKNOWN_NAME"


class DegenerateError(ReslatError):
    """A sign condition that decides the outcome sits on its boundary."""

    code = "DEGENERATE"


class ZeroDiagonalError(ReslatError):
    code = "ZERO_DIAGONAL"


class StepTooLargeError(ReslatError):
    code = "STEP_TOO_LARGE"


@dataclass(frozen=True, eq=False)
class InteractionMatrix:
    """n x n ability matrix; ``entries[i, j]`` is the ability of species i
    to exploit the resource produced by species j.

    Indices are 0-based in code and 1-based in reports and file formats.
    """

    entries: np.ndarray

    def __post_init__(self):
        a = np.array(self.entries, dtype=np.float64, copy=True)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise MatrixError(f"matrix must be square, got shape {a.shape}", "NOT_SQUARE")
        if a.shape[0] < 2:
            raise MatrixError("need at least two species", "TOO_FEW_SPECIES")
        if not np.all(np.isfinite(a)):
            raise MatrixError("matrix entries must be finite", "NON_FINITE")
        if np.any(a < 0):
            i, j = np.argwhere(a < 0)[0]
            raise MatrixError(f"negative entry a[{i + 1},{j + 1}] = {a[i, j]}", "NEGATIVE_ENTRY")
        zero_cols = np.flatnonzero(~np.any(a > 0, axis=0))
        if zero_cols.size:
            raise MatrixError(
                f"resource {zero_cols[0] + 1} is exploitable by no species", "ZERO_COLUMN"
            )
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __getitem__(self, idx):
        return self.entries[idx]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def __eq__(self, other):
        if not isinstance(other, InteractionMatrix):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    def __hash__(self):
        return hash(self.entries.tobytes())

    def __repr__(self):
        return f"InteractionMatrix({self.entries.tolist()})"

    def permuted(self, perm: Sequence[int]) -> InteractionMatrix:
        """Relabel species so that new species k is old species ``perm[k]``."""
        p = np.asarray(perm)
        return InteractionMatrix(self.entries[np.ix_(p, p)])

    def submatrix(self, species: Sequence[int]) -> InteractionMatrix:
        s = np.asarray(species)
        return InteractionMatrix(self.entries[np.ix_(s, s)])

    def to_dict(self) -> dict[str, Any]:
        return {"n": self.n, "entries": self.entries.tolist()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> InteractionMatrix:
        m = cls(d["entries"])
        if "n" in d and int(d["n"]) != m.n:
            raise MatrixError(f"declared n={d['n']} but entries are {m.n}x{m.n}", "SIZE_MISMATCH")
        return m

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> InteractionMatrix:
        return cls.from_dict(json.loads(s))


def validate_matrix(entries) -> InteractionMatrix:
    return InteractionMatrix(entries)


def as_simplex(u, tol: float = SIMPLEX_TOL) -> np.ndarray:
    """Check that ``u`` lies on the unit simplex and return it as floats."""
    x = np.array(u, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ReslatError("density vector must be one-dimensional", "NOT_SIMPLEX")
    if np.any(~np.isfinite(x)) or np.any(x < 0) or np.any(x > 1):
        raise ReslatError(f"densities must lie in [0, 1], got {x.tolist()}", "NOT_SIMPLEX")
    if abs(x.sum() - 1.0) > tol:
        raise ReslatError(f"densities must sum to 1, got {x.sum()!r}", "NOT_SIMPLEX")
    return x


class Family(str, enum.Enum):
    TWO_TYPE = "two"
    M8 = "M8"
    M9 = "M9"

    @classmethod
    def parse(cls, s: str | Family) -> Family:
        if isinstance(s, Family):
            return s
        key = str(s).strip()
        for f in cls:
            if key.lower() in (f.value.lower(), f.name.lower()):
                return f
        raise ReslatError(f"unknown family {s!r}", "UNKNOWN_FAMILY")

    @property
    def size(self) -> int:
        return 2 if self is Family.TWO_TYPE else 3


@dataclass(frozen=True)
class ThetaParams:
    family: Family
    theta: tuple[float, ...]

    def __post_init__(self):
        fam = Family.parse(self.family)
        th = tuple(float(t) for t in self.theta)
        object.__setattr__(self, "family", fam)
        object.__setattr__(self, "theta", th)
        if len(th) != fam.size:
            raise ReslatError(
                f"family {fam.value} needs {fam.size} theta values, got {len(th)}", "SIZE_MISMATCH"
            )
        bad = [t for t in th if not (0.0 <= t <= 1.0)]
        if bad:
            raise ReslatError(f"theta values must lie in [0, 1], got {bad}", "THETA_RANGE")

    def to_dict(self) -> dict[str, Any]:
        return {"family": self.family.value, "theta": list(self.theta)}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> ThetaParams:
        return cls(Family.parse(d["family"]), tuple(d["theta"]))


def theta_of_two_type(m: InteractionMatrix) -> tuple[float, float]:
    """Relative ability of each species to exploit its own resource."""
    if m.n != 2:
        raise ReslatError("theta is defined for two-type matrices only", "SIZE_MISMATCH")
    a = m.entries
    return a[0, 0] / (a[0, 0] + a[1, 0]), a[1, 1] / (a[0, 1] + a[1, 1])


def family_matrix(p: ThetaParams) -> InteractionMatrix:
    th = p.theta
    if p.family is Family.TWO_TYPE:
        t1, t2 = th
        return InteractionMatrix([[t1, 1 - t2], [1 - t1, t2]])
    if p.family is Family.M8:
        # column j: 2*theta_j on the diagonal, 1 - theta_j elsewhere
        a = np.tile(1.0 - np.asarray(th), (3, 1))
        np.fill_diagonal(a, 2.0 * np.asarray(th))
        return InteractionMatrix(a)
    t1, t2, t3 = th
    return InteractionMatrix([[t1, 0.0, 1.0], [1.0, t2, 0.0], [0.0, 1.0, t3]])


_FIXED = {
    "M0": [[1, 0, 4], [4, 1, 0], [0, 4, 1]],
    "M1": [[1, 1, 2], [2, 0, 0], [0, 8, 1]],
    "M2": [[1, 1, 2], [2, 0, 1], [0, 4, 0]],
    "M3": [[1, 2, 2], [2, 1, 2], [2, 2, 1]],
    "M6": [[0, 1], [1, 0]],
    "M7": [[0, 1], [1, 1]],
}

BUILTIN_NAMES = ("M0", "M1", "M2", "M3", "M4", "M5", "M6", "M7", "M8", "M9", "voter")


def builtin_matrix(
    name: str,
    eps: float | None = None,
    theta: Sequence[float] | None = None,
    n: int = 2,
) -> InteractionMatrix:
    """Named matrices. M4/M5 take ``eps``; M8/M9 take ``theta``; ``voter``
    is the all-ones matrix of size ``n``."""
    key = name.strip()
    if key in _FIXED:
        return InteractionMatrix(_FIXED[key])
    if key in ("M4", "M5"):
        if eps is None:
            raise ReslatError(f"{key} needs a value for eps", "MISSING_PARAMETER")
        e = float(eps)
        if key == "M4":
            return InteractionMatrix([[1 - e, 0.0], [e, 1.0]])
        return InteractionMatrix([[1 - e, 1 - e], [1 + e, 1 + e]])
    if key in ("M8", "M9"):
        if theta is None:
            raise ReslatError(f"{key} needs theta values", "MISSING_PARAMETER")
        return family_matrix(ThetaParams(Family(key), tuple(theta)))
    if key.lower() == "voter":
        return InteractionMatrix(np.ones((n, n)))
    raise UnknownMatrixError(f"unknown matrix name {name!r}")


class Regime(str, enum.Enum):
    CHEATER_WINS = "CHEATER_WINS"
    BISTABLE = "BISTABLE"
    COOPERATION_COEXIST = "COOPERATION_COEXIST"
    TRISTABLE = "TRISTABLE"
    HETEROCLINIC_STABLE = "HETEROCLINIC_STABLE"
    HETEROCLINIC_REPELLING_PERMANENT = "HETEROCLINIC_REPELLING_PERMANENT"
    PERMANENT_CASE = "PERMANENT_CASE"
    BOUNDARY_STABLE = "BOUNDARY_STABLE"
    UNCLASSIFIED = "UNCLASSIFIED"
    DEGENERATE = "DEGENERATE"


# labels that carry an integer argument (species number or case number)
_INDEXED = {Regime.CHEATER_WINS, Regime.PERMANENT_CASE}


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_clean(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        x = float(v)
        if not math.isfinite(x):
            raise ReslatError(f"non-finite evidence value {x}", "NON_FINITE")
        return x
    return v


@dataclass(frozen=True)
class RegimeReport:
    """Long-run outcome of the mean-field dynamics plus the numbers behind it.

    ``index`` is the 1-based winning species for CHEATER_WINS and the case
    number for PERMANENT_CASE; ``None`` otherwise.
    """

    label: Regime
    index: int | None = None
    evidence: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "label", Regime(self.label))
        if (self.label in _INDEXED) != (self.index is not None):
            raise ReslatError(f"label {self.label.value} and index {self.index} disagree")
        object.__setattr__(self, "evidence", _clean(self.evidence))

    @property
    def name(self) -> str:
        if self.index is None:
            return self.label.value
        return f"{self.label.value}({self.index})"

    @property
    def is_permanent(self) -> bool:
        return self.label in (Regime.PERMANENT_CASE, Regime.HETEROCLINIC_REPELLING_PERMANENT)

    def to_dict(self) -> dict[str, Any]:
        # the label key itself carries the index, e.g. {"PERMANENT_CASE": 0}
        return {"label": self.label.value, self.label.value: self.index, "evidence": self.evidence}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RegimeReport:
        label = Regime(d["label"])
        return cls(label, d.get(label.value), d.get("evidence", {}))

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_json(cls, s: str) -> RegimeReport:
        return cls.from_dict(json.loads(s))
