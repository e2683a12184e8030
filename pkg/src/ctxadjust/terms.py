"""Design-matrix term construction: spline bases, penalties, constraints.

Univariate smooths use the cardinal natural cubic spline basis: one basis
function per knot, each interpolating 1 at its knot and 0 at the others,
with natural (zero second derivative) end conditions and linear
extrapolation beyond the boundary knots. The curvature penalty is the
classic integrated squared second derivative, S = D' B^{-1} D (Green &
Silverman 1994, ch. 2; Wood 2017, ch. 5). Sum-to-zero identifiability
constraints are absorbed by reparameterizing with an orthonormal null-space
basis, keeping the penalized least squares problem unconstrained.

Random intercept effects are ridge-penalized indicator blocks. Tensor
interaction smooths multiply constrained marginal bases row-wise and carry
one curvature penalty per margin.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import TermError

TERM_KINDS = (
    "penalized_cubic", "natural_cubic_manual_knots", "dummy",
    "random_effect", "tensor_interaction",
)


@dataclass(frozen=True)
class SmoothSpec:
    """Declarative description of one model term."""

    covariate: str
    kind: str
    k: int = 10
    knots: tuple | None = None
    by: str | None = None
    by_level: object | None = None
    covariate2: str | None = None
    k2: int = 5

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise ValueError(f"unknown term kind {self.kind!r}")
        if self.kind == "tensor_interaction":
            if not self.covariate2 or self.covariate2 == self.covariate:
                raise TermError(
                    "tensor_interaction requires two distinct covariates")
        if self.knots is not None:
            object.__setattr__(self, "knots", tuple(float(v) for v in self.knots))

    @property
    def name(self) -> str:
        if self.kind == "dummy":
            return self.covariate
        if self.kind == "random_effect":
            return f"re({self.covariate})"
        if self.kind == "tensor_interaction":
            return f"ti({self.covariate},{self.covariate2})"
        if self.by is not None:
            return f"s({self.covariate}|{self.by}={self.by_level})"
        return f"s({self.covariate})"

    def to_dict(self) -> dict:
        d = {"covariate": self.covariate, "kind": self.kind, "k": self.k}
        if self.knots is not None:
            d["knots"] = list(self.knots)
        if self.by is not None:
            d["by"] = self.by
            d["by_level"] = self.by_level
        if self.covariate2 is not None:
            d["covariate2"] = self.covariate2
            d["k2"] = self.k2
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SmoothSpec":
        return cls(
            covariate=d["covariate"], kind=d["kind"], k=d.get("k", 10),
            knots=tuple(d["knots"]) if d.get("knots") is not None else None,
            by=d.get("by"), by_level=d.get("by_level"),
            covariate2=d.get("covariate2"), k2=d.get("k2", 5))


@dataclass
class TermBlock:
    """Built columns and penalties for one term."""

    name: str
    columns: np.ndarray
    penalties: list[np.ndarray]
    centered: bool
    span: slice | None = None

    def penalty_rank(self, which: int = 0, rtol: float = 1e-9) -> int:
        S = self.penalties[which]
        eig = np.linalg.eigvalsh(S)
        return int(np.sum(eig > rtol * max(eig.max(), 1e-300)))


# ---------------------------------------------------------------------------
# Natural cubic spline machinery
# ---------------------------------------------------------------------------

def _spline_system(knots: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map from knot values to second derivatives, and curvature penalty.

    Returns (F, S): F is k x k with F @ beta = second derivatives at the
    knots (zero rows at the ends, the natural condition), and
    S = D' B^{-1} D is the integrated squared second derivative penalty.
    """
    k = len(knots)
    h = np.diff(knots)
    if k < 3:
        return np.zeros((k, k)), np.zeros((k, k))
    D = np.zeros((k - 2, k))
    B = np.zeros((k - 2, k - 2))
    for r in range(k - 2):
        D[r, r] = 1.0 / h[r]
        D[r, r + 1] = -(1.0 / h[r] + 1.0 / h[r + 1])
        D[r, r + 2] = 1.0 / h[r + 1]
        B[r, r] = (h[r] + h[r + 1]) / 3.0
        if r + 1 < k - 2:
            B[r, r + 1] = B[r + 1, r] = h[r + 1] / 6.0
    Binv_D = np.linalg.solve(B, D)
    F = np.zeros((k, k))
    F[1:-1] = Binv_D
    S = D.T @ Binv_D
    S = (S + S.T) / 2.0
    return F, S


def natural_cubic_rows(x: np.ndarray, knots: np.ndarray,
                       F: np.ndarray | None = None) -> np.ndarray:
    """Evaluate the cardinal natural cubic basis at x (n x k).

    Values beyond the boundary knots lie on the tangent line at the
    boundary, so extrapolation is linear.
    """
    knots = np.asarray(knots, dtype=float)
    x = np.asarray(x, dtype=float)
    k = len(knots)
    if F is None:
        F = _spline_system(knots)[0]
    h = np.diff(knots)
    n = len(x)
    xc = np.clip(x, knots[0], knots[-1])
    j = np.clip(np.searchsorted(knots, xc, side="right") - 1, 0, k - 2)
    hj = h[j]
    t_lo = xc - knots[j]
    t_hi = knots[j + 1] - xc
    rows = np.zeros((n, k))
    idx = np.arange(n)
    rows[idx, j] += t_hi / hj
    rows[idx, j + 1] += t_lo / hj
    c_lo = (t_hi ** 3 / hj - hj * t_hi) / 6.0
    c_hi = (t_lo ** 3 / hj - hj * t_lo) / 6.0
    rows += c_lo[:, None] * F[j] + c_hi[:, None] * F[j + 1]

    below = x < knots[0]
    if below.any():
        d = np.zeros(k)
        d[0] -= 1.0 / h[0]
        d[1] += 1.0 / h[0]
        d -= (h[0] / 6.0) * F[1]
        base = np.zeros(k)
        base[0] = 1.0
        rows[below] = base + (x[below] - knots[0])[:, None] * d
    above = x > knots[-1]
    if above.any():
        d = np.zeros(k)
        d[-2] -= 1.0 / h[-1]
        d[-1] += 1.0 / h[-1]
        d += (h[-1] / 6.0) * F[-2]
        base = np.zeros(k)
        base[-1] = 1.0
        rows[above] = base + (x[above] - knots[-1])[:, None] * d
    return rows


def _null_space_transform(col_sums: np.ndarray) -> np.ndarray:
    """Orthonormal basis Z of the null space of the centering constraint."""
    c = np.asarray(col_sums, dtype=float).reshape(-1, 1)
    if np.allclose(c, 0):
        # Already centered; drop the last column to keep dimensions honest.
        k = len(col_sums)
        return np.eye(k)[:, : k - 1]
    q, _ = np.linalg.qr(c, mode="complete")
    return q[:, 1:]


def _quantile_knots(values: np.ndarray, k: int, name: str) -> np.ndarray:
    distinct = np.unique(values[np.isfinite(values)])
    if len(distinct) < 3:
        raise TermError(
            f"term on {name!r}: needs >= 3 distinct values, "
            f"got {len(distinct)}")
    if len(distinct) < k:
        warnings.warn(
            f"term on {name!r}: basis dimension reduced from {k} to "
            f"{len(distinct)} (distinct-value count)", stacklevel=3)
        k = len(distinct)
    knots = np.quantile(distinct, np.linspace(0, 1, k))
    knots = np.unique(knots)
    if len(knots) < 3:
        raise TermError(f"term on {name!r}: degenerate knot sequence")
    return knots


# ---------------------------------------------------------------------------
# Term classes (fit once on training data, reusable on new data)
# ---------------------------------------------------------------------------

class Term:
    """Base class: learn state from training data, then build columns."""

    spec: SmoothSpec
    name: str
    ncols: int
    penalties: list[np.ndarray]

    def fit(self, frame: pd.DataFrame) -> "Term":
        raise NotImplementedError

    def transform(self, frame: pd.DataFrame) -> np.ndarray:
        raise NotImplementedError

    @property
    def n_unseen(self) -> int:
        return 0

    def state_dict(self) -> dict:
        raise NotImplementedError


class DummyTerm(Term):
    def __init__(self, spec: SmoothSpec):
        self.spec = spec
        self.name = spec.name
        self.ncols = 1
        self.penalties = []

    def fit(self, frame):
        col = frame[self.spec.covariate].to_numpy(dtype=float)
        if np.all(col == col[0]):
            raise TermError(f"dummy {self.spec.covariate!r} is constant")
        return self

    def transform(self, frame):
        return frame[self.spec.covariate].to_numpy(dtype=float).reshape(-1, 1)

    def state_dict(self):
        return {"spec": self.spec.to_dict()}

    @classmethod
    def from_state(cls, state):
        return cls(SmoothSpec.from_dict(state["spec"]))


class CubicSmoothTerm(Term):
    """Penalized cubic smooth or unpenalized natural cubic with manual knots.

    With a `by` condition, columns are masked to zero outside the level and
    knots plus centering come from the in-level rows only, so the block
    still sums to ~0 over the whole sample.
    """

    def __init__(self, spec: SmoothSpec):
        self.spec = spec
        self.name = spec.name
        self.knots_: np.ndarray | None = None
        self.Z_: np.ndarray | None = None
        self.F_: np.ndarray | None = None

    def _mask(self, frame) -> np.ndarray:
        if self.spec.by is None:
            return np.ones(len(frame), dtype=bool)
        return (frame[self.spec.by] == self.spec.by_level).to_numpy()

    def fit(self, frame):
        spec = self.spec
        mask = self._mask(frame)
        if not mask.any():
            raise TermError(
                f"{self.name}: conditioning level selects no rows")
        values = frame.loc[mask, spec.covariate].to_numpy(dtype=float)
        if spec.kind == "natural_cubic_manual_knots":
            if spec.knots is None or len(spec.knots) < 2:
                raise TermError(f"{self.name}: needs >= 2 manual knots")
            knots = np.asarray(spec.knots, dtype=float)
            if not np.all(np.diff(knots) > 0):
                raise TermError(f"{self.name}: knots must be strictly increasing")
            penalized = False
        else:
            if spec.k < 3:
                raise TermError(f"{self.name}: basis dimension must be >= 3")
            knots = _quantile_knots(values, spec.k, spec.covariate)
            penalized = True
        self.knots_ = knots
        self.F_, S = _spline_system(knots)
        basis = natural_cubic_rows(values, knots, self.F_)
        self.Z_ = _null_space_transform(basis.sum(axis=0))
        self.ncols = self.Z_.shape[1]
        if penalized:
            Sc = self.Z_.T @ S @ self.Z_
            self.penalties = [(Sc + Sc.T) / 2.0]
        else:
            self.penalties = []
        return self

    def transform(self, frame):
        mask = self._mask(frame)
        out = np.zeros((len(frame), self.ncols))
        if mask.any():
            values = frame.loc[mask, self.spec.covariate].to_numpy(dtype=float)
            out[mask] = natural_cubic_rows(values, self.knots_, self.F_) @ self.Z_
        return out

    def value_rows(self, values: Sequence[float]) -> np.ndarray:
        """Basis rows at raw covariate values, ignoring any by-condition."""
        arr = np.asarray(values, dtype=float)
        return natural_cubic_rows(arr, self.knots_, self.F_) @ self.Z_

    def state_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "knots": self.knots_.tolist(),
            "Z": self.Z_.tolist(),
        }

    @classmethod
    def from_state(cls, state):
        term = cls(SmoothSpec.from_dict(state["spec"]))
        term.knots_ = np.asarray(state["knots"], dtype=float)
        term.F_, S = _spline_system(term.knots_)
        term.Z_ = np.asarray(state["Z"], dtype=float)
        term.ncols = term.Z_.shape[1]
        if term.spec.kind == "penalized_cubic":
            Sc = term.Z_.T @ S @ term.Z_
            term.penalties = [(Sc + Sc.T) / 2.0]
        else:
            term.penalties = []
        return term


class RandomEffectTerm(Term):
    """Ridge-penalized indicator columns: a random intercept per level."""

    def __init__(self, spec: SmoothSpec):
        self.spec = spec
        self.name = spec.name
        self.levels_: list | None = None
        self._unseen = 0

    def fit(self, frame):
        levels = sorted(pd.unique(frame[self.spec.covariate]).tolist())
        if len(levels) < 2:
            raise TermError(
                f"{self.name}: needs >= 2 levels, got {len(levels)}")
        self.levels_ = levels
        self.ncols = len(levels)
        self.penalties = [np.eye(self.ncols)]
        return self

    def transform(self, frame):
        index = {lev: i for i, lev in enumerate(self.levels_)}
        out = np.zeros((len(frame), self.ncols))
        self._unseen = 0
        for row, value in enumerate(frame[self.spec.covariate]):
            col = index.get(value)
            if col is None:
                self._unseen += 1  # population-level prediction: zero row
            else:
                out[row, col] = 1.0
        return out

    @property
    def n_unseen(self) -> int:
        return self._unseen

    def state_dict(self):
        return {"spec": self.spec.to_dict(), "levels": list(self.levels_)}

    @classmethod
    def from_state(cls, state):
        term = cls(SmoothSpec.from_dict(state["spec"]))
        term.levels_ = list(state["levels"])
        term.ncols = len(term.levels_)
        term.penalties = [np.eye(term.ncols)]
        return term


class TensorInteractionTerm(Term):
    """Interaction-only tensor product of two constrained cubic margins.

    Each margin is centered first, so the product space excludes additive
    main effects; a final sum-to-zero constraint keeps the block orthogonal
    to the intercept. One curvature penalty per margin.
    """

    def __init__(self, spec: SmoothSpec):
        self.spec = spec
        self.name = spec.name
        self.knots1_: np.ndarray | None = None
        self.knots2_: np.ndarray | None = None

    def fit(self, frame):
        spec = self.spec
        x1 = frame[spec.covariate].to_numpy(dtype=float)
        x2 = frame[spec.covariate2].to_numpy(dtype=float)
        self.knots1_ = _quantile_knots(x1, spec.k, spec.covariate)
        self.knots2_ = _quantile_knots(x2, spec.k2, spec.covariate2)
        self.F1_, S1 = _spline_system(self.knots1_)
        self.F2_, S2 = _spline_system(self.knots2_)
        B1 = natural_cubic_rows(x1, self.knots1_, self.F1_)
        B2 = natural_cubic_rows(x2, self.knots2_, self.F2_)
        self.Z1_ = _null_space_transform(B1.sum(axis=0))
        self.Z2_ = _null_space_transform(B2.sum(axis=0))
        S1c = self.Z1_.T @ S1 @ self.Z1_
        S2c = self.Z2_.T @ S2 @ self.Z2_
        M1 = B1 @ self.Z1_
        M2 = B2 @ self.Z2_
        raw = M1[:, :, None] * M2[:, None, :]
        raw = raw.reshape(len(frame), -1)
        self.Zt_ = _null_space_transform(raw.sum(axis=0))
        self.ncols = self.Zt_.shape[1]
        p1 = np.kron(S1c, np.eye(self.Z2_.shape[1]))
        p2 = np.kron(np.eye(self.Z1_.shape[1]), S2c)
        self.penalties = [
            self.Zt_.T @ p1 @ self.Zt_,
            self.Zt_.T @ p2 @ self.Zt_,
        ]
        self.penalties = [(S + S.T) / 2.0 for S in self.penalties]
        return self

    def transform(self, frame):
        x1 = frame[self.spec.covariate].to_numpy(dtype=float)
        x2 = frame[self.spec.covariate2].to_numpy(dtype=float)
        M1 = natural_cubic_rows(x1, self.knots1_, self.F1_) @ self.Z1_
        M2 = natural_cubic_rows(x2, self.knots2_, self.F2_) @ self.Z2_
        raw = (M1[:, :, None] * M2[:, None, :]).reshape(len(frame), -1)
        return raw @ self.Zt_

    def state_dict(self):
        return {
            "spec": self.spec.to_dict(),
            "knots1": self.knots1_.tolist(), "knots2": self.knots2_.tolist(),
            "Z1": self.Z1_.tolist(), "Z2": self.Z2_.tolist(),
            "Zt": self.Zt_.tolist(),
        }

    @classmethod
    def from_state(cls, state):
        term = cls(SmoothSpec.from_dict(state["spec"]))
        term.knots1_ = np.asarray(state["knots1"], dtype=float)
        term.knots2_ = np.asarray(state["knots2"], dtype=float)
        term.F1_, S1 = _spline_system(term.knots1_)
        term.F2_, S2 = _spline_system(term.knots2_)
        term.Z1_ = np.asarray(state["Z1"], dtype=float)
        term.Z2_ = np.asarray(state["Z2"], dtype=float)
        term.Zt_ = np.asarray(state["Zt"], dtype=float)
        term.ncols = term.Zt_.shape[1]
        S1c = term.Z1_.T @ S1 @ term.Z1_
        S2c = term.Z2_.T @ S2 @ term.Z2_
        p1 = np.kron(S1c, np.eye(term.Z2_.shape[1]))
        p2 = np.kron(np.eye(term.Z1_.shape[1]), S2c)
        term.penalties = [
            (term.Zt_.T @ p1 @ term.Zt_ + (term.Zt_.T @ p1 @ term.Zt_).T) / 2,
            (term.Zt_.T @ p2 @ term.Zt_ + (term.Zt_.T @ p2 @ term.Zt_).T) / 2,
        ]
        return term


_TERM_CLASSES = {
    "dummy": DummyTerm,
    "penalized_cubic": CubicSmoothTerm,
    "natural_cubic_manual_knots": CubicSmoothTerm,
    "random_effect": RandomEffectTerm,
    "tensor_interaction": TensorInteractionTerm,
}


def make_term(spec: SmoothSpec) -> Term:
    return _TERM_CLASSES[spec.kind](spec)


# ---------------------------------------------------------------------------
# Standalone builders (vector-in, TermBlock-out)
# ---------------------------------------------------------------------------

def _block_from_term(term: Term, frame: pd.DataFrame) -> TermBlock:
    term.fit(frame)
    cols = term.transform(frame)
    centered = isinstance(term, (CubicSmoothTerm, TensorInteractionTerm))
    return TermBlock(term.name, cols, list(term.penalties), centered)


def build_cubic_smooth(values, k: int) -> TermBlock:
    """Penalized cubic smooth of one covariate: k-1 centered columns."""
    frame = pd.DataFrame({"x": np.asarray(values, dtype=float)})
    return _block_from_term(
        make_term(SmoothSpec("x", "penalized_cubic", k=k)), frame)


def build_natural_cubic(values, knots) -> TermBlock:
    """Unpenalized natural cubic basis with manual knots, centered."""
    frame = pd.DataFrame({"x": np.asarray(values, dtype=float)})
    return _block_from_term(
        make_term(SmoothSpec("x", "natural_cubic_manual_knots",
                             knots=tuple(knots))), frame)


def build_random_effect(levels) -> TermBlock:
    frame = pd.DataFrame({"g": list(levels)})
    return _block_from_term(
        make_term(SmoothSpec("g", "random_effect")), frame)


def build_by_smooth(values, by, k: int) -> TermBlock:
    """Smooth whose columns are masked to rows where `by` is true."""
    by = np.asarray(by, dtype=bool)
    if not by.any():
        raise TermError("by-smooth: indicator is false everywhere")
    frame = pd.DataFrame({"x": np.asarray(values, dtype=float), "b": by})
    return _block_from_term(
        make_term(SmoothSpec("x", "penalized_cubic", k=k,
                             by="b", by_level=True)), frame)


def build_tensor_interaction(x1, x2, k1: int, k2: int) -> TermBlock:
    frame = pd.DataFrame({"x1": np.asarray(x1, dtype=float),
                          "x2": np.asarray(x2, dtype=float)})
    return _block_from_term(
        make_term(SmoothSpec("x1", "tensor_interaction", k=k1,
                             covariate2="x2", k2=k2)), frame)


# ---------------------------------------------------------------------------
# Model spec and assembled design
# ---------------------------------------------------------------------------

@dataclass
class ModelSpec:
    """Ordered term list plus intercept switch; JSON-serializable."""

    terms: list[SmoothSpec] = field(default_factory=list)
    include_intercept: bool = True

    def to_json(self) -> str:
        return json.dumps({
            "include_intercept": self.include_intercept,
            "terms": [t.to_dict() for t in self.terms],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelSpec":
        d = json.loads(text)
        return cls(
            terms=[SmoothSpec.from_dict(t) for t in d["terms"]],
            include_intercept=d.get("include_intercept", True))

    def spec_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


class ModelDesign:
    """Assembled design matrix with per-term penalties and column spans.

    Deterministic: identical inputs produce bitwise-identical matrices
    (term blocks are built independently and concatenated in spec order).
    """

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.terms: list[Term] = []
        self.spans: dict[str, slice] = {}
        self.penalty_labels: list[str] = []
        self._penalty_entries: list[tuple[slice, np.ndarray]] = []
        self.ncols = 0
        self.X_: np.ndarray | None = None

    def fit(self, frame: pd.DataFrame) -> "ModelDesign":
        self.terms = []
        self.spans = {}
        self.penalty_labels = []
        self._penalty_entries = []
        start = 0
        blocks = []
        if self.spec.include_intercept:
            blocks.append(np.ones((len(frame), 1)))
            self.spans["intercept"] = slice(0, 1)
            start = 1
        for term_spec in self.spec.terms:
            term = make_term(term_spec).fit(frame)
            cols = term.transform(frame)
            span = slice(start, start + term.ncols)
            self.spans[term.name] = span
            for i, S in enumerate(term.penalties):
                label = term.name if len(term.penalties) == 1 \
                    else f"{term.name}[{i + 1}]"
                self.penalty_labels.append(label)
                self._penalty_entries.append((span, S))
            self.terms.append(term)
            blocks.append(cols)
            start += term.ncols
        self.ncols = start
        self.X_ = np.ascontiguousarray(np.hstack(blocks))
        return self

    def transform(self, frame: pd.DataFrame) -> tuple[np.ndarray, dict]:
        """Design rows for new data; returns (X, unseen-level counts)."""
        blocks = []
        if self.spec.include_intercept:
            blocks.append(np.ones((len(frame), 1)))
        unseen = {}
        for term in self.terms:
            blocks.append(term.transform(frame))
            if term.n_unseen:
                unseen[term.name] = term.n_unseen
        return np.ascontiguousarray(np.hstack(blocks)), unseen

    @property
    def n_penalties(self) -> int:
        return len(self._penalty_entries)

    def penalty_full(self, index: int) -> np.ndarray:
        span, S = self._penalty_entries[index]
        full = np.zeros((self.ncols, self.ncols))
        full[span, span] = S
        return full

    def penalty_matrix(self, lam: np.ndarray) -> np.ndarray:
        """Assembled penalty Sum_j lambda_j S_j at full size."""
        full = np.zeros((self.ncols, self.ncols))
        for lam_j, (span, S) in zip(lam, self._penalty_entries):
            full[span, span] += lam_j * S
        return full

    def term_by_name(self, name: str) -> Term:
        for term in self.terms:
            if term.name == name:
                return term
        raise KeyError(f"no term named {name!r}")

    def term_for_covariate(self, covariate: str) -> Term:
        for term in self.terms:
            if term.spec.covariate == covariate and term.spec.by is None:
                return term
        raise KeyError(f"no term on covariate {covariate!r}")

    def term_names(self) -> list[str]:
        return [t.name for t in self.terms]

    def state_dict(self) -> dict:
        return {
            "include_intercept": self.spec.include_intercept,
            "terms": [
                {"kind": t.spec.kind, "state": t.state_dict()}
                for t in self.terms
            ],
        }

    @classmethod
    def from_state(cls, state: dict) -> "ModelDesign":
        specs = [SmoothSpec.from_dict(t["state"]["spec"])
                 for t in state["terms"]]
        design = cls(ModelSpec(specs, state["include_intercept"]))
        start = 1 if design.spec.include_intercept else 0
        if design.spec.include_intercept:
            design.spans["intercept"] = slice(0, 1)
        for entry in state["terms"]:
            term = _TERM_CLASSES[entry["kind"]].from_state(entry["state"])
            span = slice(start, start + term.ncols)
            design.spans[term.name] = span
            for i, S in enumerate(term.penalties):
                label = term.name if len(term.penalties) == 1 \
                    else f"{term.name}[{i + 1}]"
                design.penalty_labels.append(label)
                design._penalty_entries.append((span, S))
            design.terms.append(term)
            start += term.ncols
        design.ncols = start
        return design


def default_terms(frame: pd.DataFrame | None = None,
                  include_team: bool = True,
                  include_season: bool = True,
                  minute_k: int = 10) -> list[SmoothSpec]:
    """Baseline term set: context smooths, away dummy, random intercepts.

    When a frame is given, covariates without enough distinct values are
    dropped with a warning so small or quiet datasets still fit.
    """
    candidates = [
        SmoothSpec("score_diff", "penalized_cubic", k=7),
        SmoothSpec("red_card_diff", "penalized_cubic", k=5),
        SmoothSpec("win_prob_diff", "penalized_cubic", k=10),
        SmoothSpec("minute", "penalized_cubic", k=minute_k, by="half", by_level=1),
        SmoothSpec("minute", "penalized_cubic", k=minute_k, by="half", by_level=2),
        SmoothSpec("away", "dummy"),
    ]
    if include_team:
        candidates.append(SmoothSpec("team", "random_effect"))
    if include_season:
        candidates.append(SmoothSpec("season", "random_effect"))
    if frame is None:
        return candidates
    kept = []
    for spec in candidates:
        values = frame[spec.covariate]
        distinct = values.nunique()
        if spec.kind == "penalized_cubic" and distinct < 3:
            warnings.warn(f"dropping {spec.name}: only {distinct} distinct "
                          "values", stacklevel=2)
            continue
        if spec.kind == "dummy" and distinct < 2:
            warnings.warn(f"dropping {spec.name}: constant", stacklevel=2)
            continue
        if spec.kind == "random_effect" and distinct < 2:
            warnings.warn(f"dropping {spec.name}: single level", stacklevel=2)
            continue
        kept.append(spec)
    return kept
