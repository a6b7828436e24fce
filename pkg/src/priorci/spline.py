"""Half-width function d: natural cubic spline on [0, k], constant t(m) beyond k."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["KnotGrid", "DFunction", "SplineError", "build_d", "evaluate_d", "natural_spline_moments", "spline_basis"]

_POSITIVITY_SAMPLES = 512


class SplineError(ValueError):
    """Raised for invalid knot grids or half-width functions that are not positive."""


@dataclass(frozen=True)
class KnotGrid:
    knots: tuple[float, ...]

    def __post_init__(self):
        knots = tuple(float(x) for x in self.knots)
        object.__setattr__(self, "knots", knots)
        if len(knots) < 3:
            raise SplineError("at least three knots are required")
        if knots[0] != 0.0:
            raise SplineError("the first knot must be 0")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise SplineError("knots must be strictly increasing")

    @property
    def k(self) -> float:
        return self.knots[-1]

    @property
    def q(self) -> int:
        return len(self.knots)

    @classmethod
    def scaled(cls, k: float, pattern=(0, 1, 2, 3, 7, 12, 15)) -> "KnotGrid":
        """Rescale a knot pattern so that its last knot equals ``k``."""
        pattern = np.asarray(pattern, dtype=float)
        return cls(tuple(k * pattern / pattern[-1]))


def natural_spline_moments(x, y):
    """Second derivatives at the knots of the natural cubic interpolant (Thomas algorithm)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    h = np.diff(x)
    moments = np.zeros(n)
    if n < 3:
        return moments
    # interior equations i = 1..n-2:
    # h[i-1] M[i-1] + 2 (h[i-1] + h[i]) M[i] + h[i] M[i+1] = 6 (slope[i] - slope[i-1])
    slope = np.diff(y) / h
    sub = h[1:-1].copy()
    diag = 2.0 * (h[:-1] + h[1:])
    sup = h[1:-1].copy()
    rhs = 6.0 * np.diff(slope)
    m = diag.size
    for i in range(1, m):
        w = sub[i - 1] / diag[i - 1]
        diag[i] -= w * sup[i - 1]
        rhs[i] -= w * rhs[i - 1]
    sol = np.empty(m)
    sol[-1] = rhs[-1] / diag[-1]
    for i in range(m - 2, -1, -1):
        sol[i] = (rhs[i] - sup[i] * sol[i + 1]) / diag[i]
    moments[1:-1] = sol
    return moments


@dataclass(frozen=True)
class DFunction:
    """Half-width multiplier d(x).

    ``values`` holds d at the first q-1 knots; d at the last knot equals
    ``tail`` and d(x) = tail for every x >= k.  The spline imposes no slope
    condition at k, so d may have a kink there.
    """

    grid: KnotGrid
    values: tuple[float, ...]
    tail: float
    moments: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "tail", float(self.tail))
        if len(values) != self.grid.q - 1:
            raise SplineError(f"expected {self.grid.q - 1} knot values, got {len(values)}")
        if not self.tail > 0:
            raise SplineError("tail value t(m) must be positive")
        if any(not (v > 0 and np.isfinite(v)) for v in values):
            raise SplineError("knot values must be positive and finite")
        moments = natural_spline_moments(self.grid.knots, self.knot_values)
        moments.setflags(write=False)
        object.__setattr__(self, "moments", moments)
        low = self.minimum_on_support()
        if not low > 0:
            raise SplineError(f"spline is not positive on [0, k] (minimum {low:.6g})")

    @property
    def knot_values(self) -> np.ndarray:
        return np.array(self.values + (self.tail,))

    @property
    def k(self) -> float:
        return self.grid.k

    def __call__(self, x):
        return evaluate_d(self, x)

    def coefficients(self) -> np.ndarray:
        """Per-interval cubic coefficients ``(c0, c1, c2, c3)`` in powers of ``x - x_i``."""
        x = np.asarray(self.grid.knots)
        y = self.knot_values
        M = self.moments
        h = np.diff(x)
        c0 = y[:-1]
        c1 = np.diff(y) / h - h * (2.0 * M[:-1] + M[1:]) / 6.0
        c2 = M[:-1] / 2.0
        c3 = np.diff(M) / (6.0 * h)
        return np.column_stack([c0, c1, c2, c3])

    def minimum_on_support(self) -> float:
        x = np.asarray(self.grid.knots)
        coef = self.coefficients()
        best = float(np.min(self.knot_values))
        for i, (c0, c1, c2, c3) in enumerate(coef):
            h = x[i + 1] - x[i]
            r = np.linspace(0.0, h, _POSITIVITY_SAMPLES)
            best = min(best, float(np.min(c0 + r * (c1 + r * (c2 + r * c3)))))
            # interior critical points of the cubic
            roots = np.roots([3.0 * c3, 2.0 * c2, c1]) if (c3 or c2) else np.array([])
            for r0 in roots:
                if abs(r0.imag) < 1e-12 and 0.0 < r0.real < h:
                    r0 = r0.real
                    best = min(best, c0 + r0 * (c1 + r0 * (c2 + r0 * c3)))
        return best

    def basis(self, x) -> np.ndarray:
        return spline_basis(self.grid.knots, x)

    def with_values(self, values) -> "DFunction":
        return DFunction(self.grid, tuple(values), self.tail)

    def to_dict(self) -> dict:
        """(knot, value) pairs for the free knots, then k and the tail value t(m)."""
        return {
            "points": [[x, v] for x, v in zip(self.grid.knots, self.values)],
            "k": self.k,
            "tail": self.tail,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DFunction":
        if "points" in data:
            knots = tuple(float(x) for x, _ in data["points"]) + (float(data["k"]),)
            values = tuple(float(v) for _, v in data["points"])
        else:
            knots, values = tuple(data["knots"]), tuple(data["values"])
        return cls(KnotGrid(knots), values, data["tail"])


def spline_basis(knots, x) -> np.ndarray:
    """Matrix B with spline(x) = B @ (values at all q knots), for x inside [0, k]."""
    q = len(knots)
    eye = np.eye(q)
    return np.column_stack([_spline_eval(knots, e, natural_spline_moments(knots, e), x) for e in eye])


def _spline_eval(knots, y, moments, x):
    knots = np.asarray(knots)
    x = np.asarray(x, dtype=float)
    i = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, knots.size - 2)
    h = knots[i + 1] - knots[i]
    a = (knots[i + 1] - x) / h
    b = (x - knots[i]) / h
    return a * y[i] + b * y[i + 1] + ((a**3 - a) * moments[i] + (b**3 - b) * moments[i + 1]) * h * h / 6.0


def build_d(grid: KnotGrid, values, tail: float) -> DFunction:
    return DFunction(grid, tuple(values), tail)


def evaluate_d(d: DFunction, x):
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0) or np.any(np.isnan(x_arr)):
        raise ValueError("d is defined on [0, inf)")
    inside = _spline_eval(d.grid.knots, d.knot_values, d.moments, np.minimum(x_arr, d.k))
    out = np.where(x_arr >= d.k, d.tail, inside)
    return float(out) if np.ndim(x) == 0 else out
