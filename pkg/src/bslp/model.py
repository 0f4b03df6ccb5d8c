"""Domain types for bilevel stochastic linear programs and their JSON form.

A problem instance couples a leader decision ``x`` in a polyhedron ``X`` with
a follower who, after observing a scenario ``z``, solves

    min_y  d'y   s.t.  A y <= T x + b0 + z

The leader's outcome for a scenario is ``c'x + q'y`` with ``y`` selected from
the follower's optimal set (optimistically or pessimistically).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Sequence

import numpy as np

PROB_SUM_TOL = 1e-12


class ModelError(ValueError):
    """Invalid problem data.  ``code`` identifies which invariant failed."""

    def __init__(self, code: str, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code


def _matrix(value, name: str, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelError("type", f"{name} is not a numeric matrix") from exc
    if arr.ndim == 1 and arr.size == 0 and cols is not None:
        arr = arr.reshape(0, cols)
    if arr.ndim != 2:
        raise ModelError("dimension", f"{name} must be a 2-D array, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise ModelError("dimension", f"{name} has {arr.shape[0]} rows, expected {rows}")
    if cols is not None and arr.shape[1] != cols:
        raise ModelError("dimension", f"{name} has {arr.shape[1]} columns, expected {cols}")
    if not np.all(np.isfinite(arr)):
        raise ModelError("nonfinite", f"{name} contains NaN or Inf")
    return arr


def _vector(value, name: str, size: int | None = None) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelError("type", f"{name} is not a numeric vector") from exc
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ModelError("dimension", f"{name} must be a vector, got shape {arr.shape}")
    if size is not None and arr.size != size:
        raise ModelError("dimension", f"{name} has length {arr.size}, expected {size}")
    if not np.all(np.isfinite(arr)):
        raise ModelError("nonfinite", f"{name} contains NaN or Inf")
    return arr


class Sense(str, Enum):
    OPTIMISTIC = "optimistic"
    PESSIMISTIC = "pessimistic"


@dataclass(frozen=True, eq=False)
class Polyhedron:
    """The set ``{x : G x <= h}``."""

    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        G = np.asarray(self.G, dtype=float)
        G = G.reshape(0, 0) if G.size == 0 and G.ndim < 2 else np.atleast_2d(G)
        h = np.atleast_1d(np.asarray(self.h, dtype=float))
        if G.shape[0] != h.shape[0]:
            raise ModelError("dimension", f"G has {G.shape[0]} rows but h has {h.shape[0]}")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(h))):
            raise ModelError("nonfinite", "polyhedron data contains NaN or Inf")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "h", h)

    @property
    def dim(self) -> int:
        return self.G.shape[1]

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float]) -> "Polyhedron":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        n = lo.size
        eye = np.eye(n)
        return cls(np.vstack([-eye, eye]), np.concatenate([-lo, hi]))

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        if self.G.shape[0] == 0:
            return True
        return bool(np.all(self.G @ x <= self.h + tol * (1.0 + np.abs(self.h))))

    def intersect(self, other: "Polyhedron") -> "Polyhedron":
        return Polyhedron(np.vstack([self.G, other.G]), np.concatenate([self.h, other.h]))

    def __eq__(self, other):
        return (
            isinstance(other, Polyhedron)
            and np.array_equal(self.G, other.G)
            and np.array_equal(self.h, other.h)
        )


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Finitely many atoms with strictly positive probabilities.

    Atoms are stored as a ``(K, dim)`` array.  Probabilities are checked to sum
    to one within ``PROB_SUM_TOL`` and then divided by their exact sum.
    """

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms.reshape(-1, 1)
        probs = np.atleast_1d(np.asarray(self.probs, dtype=float))
        if atoms.ndim != 2:
            raise ModelError("dimension", "atoms must be a list of equal-length vectors")
        if atoms.shape[0] != probs.shape[0]:
            raise ModelError(
                "dimension", f"{atoms.shape[0]} atoms but {probs.shape[0]} probabilities"
            )
        if atoms.shape[0] == 0:
            raise ModelError("probability", "distribution needs at least one atom")
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(probs))):
            raise ModelError("nonfinite", "distribution contains NaN or Inf")
        if np.any(probs <= 0.0):
            raise ModelError("probability", "probabilities must be strictly positive")
        total = math.fsum(probs.tolist())
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise ModelError("probability", f"probabilities sum to {total!r}, not 1")
        if total != 1.0:
            probs = probs / total
        atoms.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def uniform(cls, atoms) -> "DiscreteDistribution":
        atoms = np.asarray(atoms, dtype=float)
        k = atoms.shape[0]
        return cls(atoms, np.full(k, 1.0 / k))

    @classmethod
    def point(cls, value) -> "DiscreteDistribution":
        return cls(np.atleast_2d(np.asarray(value, dtype=float)), [1.0])

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def values(self) -> np.ndarray:
        """Atoms of a one-dimensional law as a flat array."""
        if self.dim != 1:
            raise ValueError("values is only defined for one-dimensional distributions")
        return self.atoms[:, 0]

    def mean(self) -> np.ndarray:
        return np.array([math.fsum(col) for col in (self.atoms * self.probs[:, None]).T])

    def __eq__(self, other):
        return (
            isinstance(other, DiscreteDistribution)
            and np.array_equal(self.atoms, other.atoms)
            and np.array_equal(self.probs, other.probs)
        )


@dataclass(frozen=True, eq=False)
class LowerLevel:
    A: np.ndarray
    T: np.ndarray
    b0: np.ndarray
    d: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        A = _matrix(self.A, "A")
        s, m = A.shape
        T = _matrix(self.T, "T", rows=s)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "b0", _vector(self.b0, "b0", s))
        object.__setattr__(self, "d", _vector(self.d, "d", m))
        object.__setattr__(self, "q", _vector(self.q, "q", m))

    @property
    def m(self) -> int:
        return self.A.shape[1]

    @property
    def s(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.T.shape[1]

    def rhs(self, x, z) -> np.ndarray:
        """Right-hand side ``T x + b0 + z``; ``z`` may be a ``(K, s)`` batch."""
        return np.asarray(z, dtype=float) + (self.T @ np.asarray(x, dtype=float) + self.b0)

    def __eq__(self, other):
        return isinstance(other, LowerLevel) and all(
            np.array_equal(getattr(self, f), getattr(other, f)) for f in ("A", "T", "b0", "d", "q")
        )


@dataclass(frozen=True, eq=False)
class BilevelStochasticProblem:
    c: np.ndarray
    lower: LowerLevel
    X: Polyhedron
    scenarios: DiscreteDistribution
    sense: Sense = Sense.OPTIMISTIC

    def __post_init__(self):
        n = self.lower.n
        object.__setattr__(self, "c", _vector(self.c, "c", n))
        object.__setattr__(self, "sense", Sense(self.sense))
        if self.X.dim != n and self.X.G.shape[0] > 0:
            raise ModelError("dimension", f"X lives in R^{self.X.dim}, expected R^{n}")
        if self.X.G.shape[0] == 0 and self.X.G.shape[1] != n:
            object.__setattr__(self, "X", Polyhedron(np.zeros((0, n)), np.zeros(0)))
        if self.scenarios.dim != self.lower.s:
            raise ModelError(
                "dimension", f"scenario atoms have dimension {self.scenarios.dim}, expected s={self.lower.s}"
            )
        if min(n, self.lower.m, self.lower.s) < 1:
            raise ModelError("dimension", "n, m and s must all be at least 1")

    @property
    def n(self) -> int:
        return self.lower.n

    @property
    def m(self) -> int:
        return self.lower.m

    @property
    def s(self) -> int:
        return self.lower.s

    @property
    def K(self) -> int:
        return self.scenarios.size

    def with_scenarios(self, scenarios: DiscreteDistribution) -> "BilevelStochasticProblem":
        return BilevelStochasticProblem(self.c, self.lower, self.X, scenarios, self.sense)

    def with_sense(self, sense: Sense | str) -> "BilevelStochasticProblem":
        return BilevelStochasticProblem(self.c, self.lower, self.X, self.scenarios, Sense(sense))

    def with_X(self, X: Polyhedron) -> "BilevelStochasticProblem":
        return BilevelStochasticProblem(self.c, self.lower, X, self.scenarios, self.sense)

    def __eq__(self, other):
        return (
            isinstance(other, BilevelStochasticProblem)
            and np.array_equal(self.c, other.c)
            and self.lower == other.lower
            and self.X == other.X
            and self.scenarios == other.scenarios
            and self.sense == other.sense
        )


class RiskKind(str, Enum):
    EXPECTATION = "expectation"
    EXPECTED_EXCESS = "ee"
    SEMIDEVIATION = "sd"
    EXCESS_PROBABILITY = "ep"
    VAR = "var"
    CVAR = "cvar"
    ENTROPIC = "entropic"
    WORST_CASE = "worst"
    MEAN_RISK = "meanrisk"


_CONVEX_KINDS = {
    RiskKind.EXPECTATION,
    RiskKind.EXPECTED_EXCESS,
    RiskKind.SEMIDEVIATION,
    RiskKind.CVAR,
    RiskKind.ENTROPIC,
    RiskKind.WORST_CASE,
    RiskKind.MEAN_RISK,
}


@dataclass(frozen=True)
class RiskSpec:
    """A risk functional with its parameters.

    Only the parameters relevant to ``kind`` are used: ``eta`` for expected
    excess and excess probability, ``p`` for the order of expected excess and
    semideviation, ``rho`` for semideviation and mean-risk weights, ``alpha``
    for VaR, CVaR and the entropic measure, ``inner`` for mean-risk.
    """

    kind: RiskKind
    eta: float = 0.0
    p: float = 1.0
    rho: float = 0.0
    alpha: float = 0.5
    inner: "RiskSpec | None" = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RiskKind(self.kind))
        k = self.kind
        for name in ("eta", "p", "rho", "alpha"):
            if not math.isfinite(getattr(self, name)):
                raise ModelError("nonfinite", f"risk parameter {name} is not finite")
        if k in (RiskKind.EXPECTED_EXCESS, RiskKind.SEMIDEVIATION) and self.p < 1:
            raise ModelError("value", "order p must be >= 1")
        if k == RiskKind.SEMIDEVIATION and not 0 < self.rho <= 1:
            raise ModelError("value", "semideviation weight rho must lie in (0, 1]")
        if k in (RiskKind.VAR, RiskKind.CVAR) and not 0 < self.alpha < 1:
            raise ModelError("value", "level alpha must lie in (0, 1)")
        if k == RiskKind.ENTROPIC and not self.alpha > 0:
            raise ModelError("value", "entropic parameter alpha must be positive")
        if k == RiskKind.MEAN_RISK:
            if self.rho < 0:
                raise ModelError("value", "mean-risk weight rho must be >= 0")
            if self.inner is None or self.inner.kind not in _CONVEX_KINDS:
                raise ModelError("value", "mean-risk inner measure must be a convex risk functional")

    @classmethod
    def expectation(cls) -> "RiskSpec":
        return cls(RiskKind.EXPECTATION)

    @classmethod
    def expected_excess(cls, eta: float, p: float = 1.0) -> "RiskSpec":
        return cls(RiskKind.EXPECTED_EXCESS, eta=eta, p=p)

    @classmethod
    def semideviation(cls, rho: float, p: float = 1.0) -> "RiskSpec":
        return cls(RiskKind.SEMIDEVIATION, rho=rho, p=p)

    @classmethod
    def excess_probability(cls, eta: float) -> "RiskSpec":
        return cls(RiskKind.EXCESS_PROBABILITY, eta=eta)

    @classmethod
    def var(cls, alpha: float) -> "RiskSpec":
        return cls(RiskKind.VAR, alpha=alpha)

    @classmethod
    def cvar(cls, alpha: float) -> "RiskSpec":
        return cls(RiskKind.CVAR, alpha=alpha)

    @classmethod
    def entropic(cls, alpha: float) -> "RiskSpec":
        return cls(RiskKind.ENTROPIC, alpha=alpha)

    @classmethod
    def worst_case(cls) -> "RiskSpec":
        return cls(RiskKind.WORST_CASE)

    @classmethod
    def mean_risk(cls, rho: float, inner: "RiskSpec") -> "RiskSpec":
        return cls(RiskKind.MEAN_RISK, rho=rho, inner=inner)

    @classmethod
    def parse(cls, text: str) -> "RiskSpec":
        """Parse ``kind[:params]``, e.g. ``cvar:0.9``, ``ee:4:2``, ``meanrisk:0.5:cvar:0.9``."""
        parts = [s.strip() for s in text.strip().split(":")]
        spec, rest = cls._parse_parts(parts)
        if rest:
            raise ModelError("syntax", f"trailing risk parameters in {text!r}")
        return spec

    @classmethod
    def _parse_parts(cls, parts: list[str]) -> "tuple[RiskSpec, list[str]]":
        aliases = {
            "e": "expectation", "mean": "expectation", "expectation": "expectation",
            "ee": "ee", "sd": "sd", "ep": "ep", "var": "var", "cvar": "cvar",
            "entropic": "entropic", "entr": "entropic",
            "worst": "worst", "worstcase": "worst", "max": "worst",
            "meanrisk": "meanrisk",
        }
        if not parts or parts[0].lower() not in aliases:
            raise ModelError("syntax", f"unknown risk measure {parts[0] if parts else ''!r}")
        kind = RiskKind(aliases[parts[0].lower()])
        rest = parts[1:]

        def take(count: int, defaults: tuple = ()) -> list[float]:
            nonlocal rest
            vals = []
            for i in range(count):
                if rest and _is_number(rest[0]):
                    vals.append(float(rest.pop(0)))
                elif i >= count - len(defaults):
                    vals.append(defaults[i - (count - len(defaults))])
                else:
                    raise ModelError("syntax", f"missing parameter for {kind.value}")
            return vals

        if kind == RiskKind.EXPECTATION:
            return cls.expectation(), rest
        if kind == RiskKind.EXPECTED_EXCESS:
            eta, p = take(2, (1.0,))
            return cls.expected_excess(eta, p), rest
        if kind == RiskKind.SEMIDEVIATION:
            rho, p = take(2, (1.0,))
            return cls.semideviation(rho, p), rest
        if kind == RiskKind.EXCESS_PROBABILITY:
            return cls.excess_probability(*take(1)), rest
        if kind == RiskKind.VAR:
            return cls.var(*take(1)), rest
        if kind == RiskKind.CVAR:
            return cls.cvar(*take(1)), rest
        if kind == RiskKind.ENTROPIC:
            return cls.entropic(*take(1)), rest
        if kind == RiskKind.WORST_CASE:
            return cls.worst_case(), rest
        (rho,) = take(1)
        inner, rest = cls._parse_parts(rest)
        return cls.mean_risk(rho, inner), rest

    def label(self) -> str:
        k = self.kind
        if k == RiskKind.EXPECTATION:
            return "expectation"
        if k == RiskKind.EXPECTED_EXCESS:
            return f"ee:{self.eta!r}:{self.p!r}"
        if k == RiskKind.SEMIDEVIATION:
            return f"sd:{self.rho!r}:{self.p!r}"
        if k == RiskKind.EXCESS_PROBABILITY:
            return f"ep:{self.eta!r}"
        if k in (RiskKind.VAR, RiskKind.CVAR, RiskKind.ENTROPIC):
            return f"{k.value}:{self.alpha!r}"
        if k == RiskKind.WORST_CASE:
            return "worst"
        return f"meanrisk:{self.rho!r}:{self.inner.label()}"


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


class DominanceOrder(str, Enum):
    FIRST = "first"
    SECOND = "second"


@dataclass(frozen=True)
class BenchmarkSpec:
    dist: DiscreteDistribution
    order: DominanceOrder = DominanceOrder.FIRST

    def __post_init__(self):
        if self.dist.dim != 1:
            raise ModelError("dimension", "benchmark must be a one-dimensional distribution")
        object.__setattr__(self, "order", DominanceOrder(self.order))


# ---------------------------------------------------------------------------
# JSON I/O

_KEYS = ("n", "m", "s", "c", "q", "d", "A", "T", "b0", "X", "scenarios", "sense")


def _require(obj: dict, key: str, where: str = "problem") -> Any:
    if key not in obj:
        raise ModelError("schema", f"missing key {key!r} in {where}")
    return obj[key]


def _positive_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ModelError("type", f"{name} must be an integer")
    if value < 1:
        raise ModelError("dimension", f"{name} must be >= 1")
    return int(value)


def problem_from_dict(obj: dict) -> BilevelStochasticProblem:
    if not isinstance(obj, dict):
        raise ModelError("schema", "top-level JSON value must be an object")
    unknown = set(obj) - set(_KEYS)
    if unknown:
        raise ModelError("schema", f"unknown keys {sorted(unknown)}")
    n = _positive_int(_require(obj, "n"), "n")
    m = _positive_int(_require(obj, "m"), "m")
    s = _positive_int(_require(obj, "s"), "s")
    A = _matrix(_require(obj, "A"), "A", rows=s, cols=m)
    T = _matrix(_require(obj, "T"), "T", rows=s, cols=n)
    b0 = _vector(obj.get("b0", [0.0] * s), "b0", s)
    c = _vector(_require(obj, "c"), "c", n)
    d = _vector(_require(obj, "d"), "d", m)
    q = _vector(_require(obj, "q"), "q", m)
    Xobj = _require(obj, "X")
    if not isinstance(Xobj, dict):
        raise ModelError("schema", "X must be an object with keys G and h")
    G = _matrix(_require(Xobj, "G", "X"), "X.G", cols=n)
    h = _vector(_require(Xobj, "h", "X"), "X.h", G.shape[0])
    scen = _require(obj, "scenarios")
    if not isinstance(scen, dict):
        raise ModelError("schema", "scenarios must be an object with keys atoms and probs")
    atoms = _matrix(_require(scen, "atoms", "scenarios"), "scenarios.atoms", cols=s)
    probs = _vector(_require(scen, "probs", "scenarios"), "scenarios.probs", atoms.shape[0])
    sense = obj.get("sense", "optimistic")
    try:
        sense = Sense(sense)
    except ValueError as exc:
        raise ModelError("schema", f"sense must be 'optimistic' or 'pessimistic', got {sense!r}") from exc
    return BilevelStochasticProblem(
        c=c,
        lower=LowerLevel(A=A, T=T, b0=b0, d=d, q=q),
        X=Polyhedron(G, h),
        scenarios=DiscreteDistribution(atoms, probs),
        sense=sense,
    )


def parse_problem(text: bytes | str) -> BilevelStochasticProblem:
    """Parse and validate a problem from its JSON text."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ModelError("syntax", f"input is not valid UTF-8 at byte {exc.start}") from exc
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(
            "syntax", f"{exc.msg} at line {exc.lineno} column {exc.colno} (char {exc.pos})"
        ) from exc
    return problem_from_dict(obj)


def _floats(arr: np.ndarray) -> list:
    return np.asarray(arr, dtype=float).tolist()


def problem_to_dict(p: BilevelStochasticProblem) -> dict:
    return {
        "n": p.n,
        "m": p.m,
        "s": p.s,
        "c": _floats(p.c),
        "q": _floats(p.lower.q),
        "d": _floats(p.lower.d),
        "A": _floats(p.lower.A),
        "T": _floats(p.lower.T),
        "b0": _floats(p.lower.b0),
        "X": {"G": _floats(p.X.G), "h": _floats(p.X.h)},
        "scenarios": {"atoms": _floats(p.scenarios.atoms), "probs": _floats(p.scenarios.probs)},
        "sense": p.sense.value,
    }


def serialize_problem(p: BilevelStochasticProblem) -> bytes:
    """Canonical JSON: fixed key order, one top-level key per line."""
    d = problem_to_dict(p)
    lines = [f"  {json.dumps(k)}: {json.dumps(v, separators=(', ', ': '))}" for k, v in d.items()]
    return ("{\n" + ",\n".join(lines) + "\n}\n").encode("utf-8")


def load_problem(path) -> BilevelStochasticProblem:
    with open(path, "rb") as fh:
        return parse_problem(fh.read())
