"""One-parameter correlation families and precomputed Cholesky tables.

A family is anchored at a center correlation matrix and indexed by a
scalar state u >= 0 together with a branch flag kappa in {0, 1}.  Both
branches share one functional form on the off-diagonal,

    rho_ij(u) = (C_ij + u^2 xi_i xi_j D_ij) / sqrt((1 + xi_i^2 u^2)(1 + xi_j^2 u^2))

with an exactly unit diagonal.  C is the center, xi > 0 is the mode
vector controlling how fast each asset reacts to the state, and D is a
branch direction matrix: the raising branch (kappa = 1) uses the all-ones
direction by default and drives every pair toward comonotonicity, the
lowering branch (kappa = 0) uses the identity and shrinks every pair
toward independence.  Custom directions with unit diagonal generalize
both limits; parameterizing the lowering branch from the center outward
keeps the signed state axis continuous through zero, and is equivalent to
anchoring the family at the lowering limit under the substitution
u -> 1/u.

Positive semidefiniteness is preserved across the family: the numerator
adds a Schur product of PSD matrices to a PSD center, and the
normalisation is a congruence by a positive diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CorrelationError

__all__ = [
    "validate_correlation",
    "validate_psd",
    "repair_psd",
    "cholesky_lower",
    "CorrelationFamily",
    "TableEntry",
    "CholeskyTable",
    "build_table",
    "default_shift",
]

#: eigenvalues above this (negative) cutoff are treated as rounding noise
REPAIR_TOL = -1e-8


def validate_correlation(mat: np.ndarray, *, tol: float = 1e-10) -> np.ndarray:
    """Check symmetry, unit diagonal and entry bounds; return a float copy."""
    a = np.asarray(mat, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise CorrelationError("correlation matrix must be square")
    if not np.allclose(a, a.T, atol=tol):
        raise CorrelationError("correlation matrix must be symmetric")
    if not np.allclose(np.diag(a), 1.0, atol=tol):
        raise CorrelationError("correlation matrix must have unit diagonal")
    if np.any(np.abs(a) > 1.0 + tol):
        raise CorrelationError("correlation entries must lie in [-1, 1]")
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 1.0)
    return np.clip(a, -1.0, 1.0)


def validate_psd(mat: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric unit-diagonal matrix.

    Shape requirements raise; the caller chooses the acceptance threshold
    on the returned eigenvalue.
    """
    a = validate_correlation(mat)
    return float(np.linalg.eigvalsh(a)[0])


def repair_psd(mat: np.ndarray, *, repair_tol: float = REPAIR_TOL) -> np.ndarray:
    """Return ``mat`` or an eigenvalue-clipped repair of it.

    Minimum eigenvalues in (repair_tol, 0) count as rounding noise: the
    spectrum is clipped at zero and the diagonal renormalised back to
    one.  Anything below ``repair_tol`` raises.
    """
    a = np.asarray(mat, dtype=float)
    vals, vecs = np.linalg.eigh(a)
    lo = float(vals[0])
    if lo >= 0.0:
        return a
    if lo < repair_tol:
        raise CorrelationError(f"matrix is not positive semidefinite, min eigenvalue {lo:.3e}")
    repaired = (vecs * np.maximum(vals, 0.0)) @ vecs.T
    d = np.sqrt(np.diag(repaired))
    repaired = repaired / np.outer(d, d)
    np.fill_diagonal(repaired, 1.0)
    return 0.5 * (repaired + repaired.T)


def cholesky_lower(mat: np.ndarray, *, pivot_tol: float = 1e-12) -> np.ndarray:
    """Lower Cholesky factor, tolerating semidefinite matrices.

    Standard library routines reject singular PSD inputs such as the
    all-ones matrix, which this family reaches in its comonotone limit.
    Pivots in (-pivot_tol, pivot_tol) are flushed to zero and their
    columns zeroed below the diagonal; a pivot below -pivot_tol raises.
    """
    a = np.asarray(mat, dtype=float)
    n = a.shape[0]
    low = np.zeros((n, n))
    for j in range(n):
        d = a[j, j] - np.dot(low[j, :j], low[j, :j])
        if d < -pivot_tol:
            raise CorrelationError(f"negative pivot {d:.3e} at column {j}")
        if d <= pivot_tol:
            continue
        root = np.sqrt(d)
        low[j, j] = root
        if j + 1 < n:
            low[j + 1 :, j] = (a[j + 1 :, j] - low[j + 1 :, :j] @ low[j, :j]) / root
    return low


# ----------------------------------------------------------------------


@dataclass(eq=False)
class CorrelationFamily:
    """State-indexed correlation family around a center matrix.

    The default is flat mode (unit mode vector), under which portfolio
    covariance along either branch is a rational function of u^2 with a
    closed-form inverse; non-flat modes fall back to bisection in the
    state solver.
    """

    center: np.ndarray
    mode: np.ndarray | None = None
    up: np.ndarray | None = None
    down: np.ndarray | None = None

    def __post_init__(self):
        self.center = repair_psd(validate_correlation(self.center))
        n = self.center.shape[0]
        if self.mode is None:
            self.mode = np.ones(n)
        else:
            self.mode = np.asarray(self.mode, dtype=float)
            if self.mode.shape != (n,) or np.any(self.mode <= 0.0):
                raise CorrelationError("mode vector must be positive, one entry per asset")
        if self.up is None:
            self.up = np.ones((n, n))
        else:
            self.up = repair_psd(validate_correlation(self.up))
        if self.down is None:
            self.down = np.eye(n)
        else:
            self.down = repair_psd(validate_correlation(self.down))

    @property
    def n_assets(self) -> int:
        return self.center.shape[0]

    @property
    def flat_mode(self) -> bool:
        """True when every mode entry is one; enables closed-form inversion."""
        return bool(np.all(self.mode == 1.0))

    def direction(self, kappa: int) -> np.ndarray:
        return self.up if kappa else self.down

    def evaluate(self, u: float, kappa: int) -> np.ndarray:
        """Correlation matrix at state ``u`` on branch ``kappa``."""
        if not np.isfinite(u) or u < 0.0:
            raise CorrelationError("state u must be finite and non-negative")
        if kappa not in (0, 1):
            raise CorrelationError("branch flag kappa must be 0 or 1")
        xi = self.mode
        u2 = u * u
        scale = 1.0 / np.sqrt(1.0 + np.square(xi) * u2)
        num = self.center + u2 * np.outer(xi, xi) * self.direction(kappa)
        out = num * np.outer(scale, scale)
        np.fill_diagonal(out, 1.0)
        return out

    def limit(self, kappa: int) -> np.ndarray:
        """Correlation matrix in the u -> infinity limit of a branch."""
        out = self.direction(kappa).copy()
        np.fill_diagonal(out, 1.0)
        return out


# ----------------------------------------------------------------------
# precomputed tables


@dataclass(frozen=True)
class TableEntry:
    """One tabulated state: signed state value, matrix, Cholesky factor."""

    state: float  # signed: positive raising, negative lowering
    kappa: int
    matrix: np.ndarray
    chol: np.ndarray

    @property
    def u(self) -> float:
        return abs(self.state)


@dataclass(eq=False)
class CholeskyTable:
    """Signed-state grid of correlation matrices with Cholesky factors.

    States live on a uniform grid s_l = l * shift for l in [-m, m]; the
    raising branch sits at positive states with u = s, the lowering
    branch at negative states with u = -s, and the middle entry is the
    center matrix itself.  Lookup is nearest-state with ties rounded
    toward the higher state.
    """

    family: CorrelationFamily
    shift: float
    entries: tuple[TableEntry, ...]
    counters: dict = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return len(self.entries)

    @property
    def center_index(self) -> int:
        return (len(self.entries) - 1) // 2

    @property
    def max_state(self) -> float:
        return self.center_index * self.shift

    def states(self) -> np.ndarray:
        return np.array([e.state for e in self.entries])

    def lookup_index(self, u, kappa):
        """Nearest table index for states ``u`` on branches ``kappa``.

        Accepts arrays; out-of-range states clamp to the end entries.
        """
        s = np.where(np.asarray(kappa) > 0.5, u, -np.asarray(u, dtype=float))
        raw = np.floor(s / self.shift + 0.5).astype(np.int64) + self.center_index
        idx = np.clip(raw, 0, self.n_states - 1)
        return int(idx) if np.ndim(u) == 0 and np.ndim(kappa) == 0 else idx

    def lookup_state(self, signed_u: float) -> TableEntry:
        """Entry nearest to a signed state; clamps count on ``counters``."""
        raw = int(np.floor(signed_u / self.shift + 0.5)) + self.center_index
        if raw < 0 or raw >= self.n_states:
            self.counters["clamped"] = self.counters.get("clamped", 0) + 1
            raw = min(max(raw, 0), self.n_states - 1)
        return self.entries[raw]

    def entry(self, index: int) -> TableEntry:
        return self.entries[index]

    def matrices(self) -> np.ndarray:
        return np.stack([e.matrix for e in self.entries])

    def chols(self) -> np.ndarray:
        return np.stack([e.chol for e in self.entries])


def default_shift(states: int, *, reach: float = 0.999) -> float:
    """Grid spacing so the extreme entries cover ``reach`` of each branch.

    The blending weight u^2 / (1 + u^2) at the extreme state equals
    ``reach``, so the end-of-grid matrices sit within (1 - reach) of the
    branch limits in flat mode.
    """
    if not 0.0 < reach < 1.0:
        raise CorrelationError("reach must lie in (0, 1)")
    m = max((states - 1) // 2, 1)
    u_max = np.sqrt(reach / (1.0 - reach))
    return float(u_max / m)


def build_table(
    family: CorrelationFamily,
    *,
    states: int = 101,
    shift: float | None = None,
) -> CholeskyTable:
    """Precompute matrices and Cholesky factors on the signed-state grid.

    ``states`` is bumped to the next odd count so a center entry exists;
    the center entry holds the center matrix itself.  Every matrix is
    checked PSD (with rounding-noise repair) before factorisation, so
    lookup during simulation is branch-free.
    """
    if states < 3:
        raise CorrelationError("table needs at least 3 states")
    if states % 2 == 0:
        states += 1
    if shift is None:
        shift = default_shift(states)
    if shift <= 0.0:
        raise CorrelationError("shift must be positive")
    m = (states - 1) // 2
    entries = []
    repaired = 0
    for l in range(-m, m + 1):
        u = abs(l) * shift
        kappa = 1 if l >= 0 else 0
        mat = family.center.copy() if l == 0 else family.evaluate(u, kappa)
        fixed = repair_psd(mat)
        if fixed is not mat:
            repaired += 1
        entries.append(
            TableEntry(state=l * shift, kappa=kappa, matrix=fixed, chol=cholesky_lower(fixed))
        )
    table = CholeskyTable(family=family, shift=float(shift), entries=tuple(entries))
    table.counters["repaired"] = repaired
    return table
