"""
Cascade MDP data model.

A cascade couples an autonomous driver chain z on r states (generator C) with
a controlled chain x on n states whose generator, while z = e_i, is

    P(i, u) = A0 + A[i] + sum_j u_j B[j, i]

with u drawn from a box. Controls may depend on (t, z, x); in column x of the
controlled generator only u(t, z, x) is used.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .ctmc import GENERATOR_TOL, CouplingClass, check_generator, classify_coupling, jumps_from_generator, kron
from .errors import BadState, ControlOutOfBounds, DimensionMismatch, GeneratorInvalid

BOUNDS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class CascadeModel:
    """Affine-in-control cascade model.

    Parameters
    ----------
    C : (r, r) array
        Driver generator.
    A0 : (n, n) array
        Base generator of the controlled chain.
    A : (r, n, n) array
        Driver-dependent drift, ``A[i]`` active while z = e_i.
    B : (p, r, n, n) array
        Control matrices, ``B[j, i]`` multiplies control j while z = e_i.
    bounds : (p, 2) array
        Closed interval ``[lo_j, hi_j]`` for each control.
    """

    C: np.ndarray
    A0: np.ndarray
    A: np.ndarray
    B: np.ndarray
    bounds: np.ndarray

    def __post_init__(self):
        C = np.array(self.C, dtype=float)
        A0 = np.array(self.A0, dtype=float)
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        bounds = np.array(self.bounds, dtype=float).reshape(-1, 2)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise DimensionMismatch(f"C must be square, got {C.shape}")
        r = C.shape[0]
        if A0.ndim != 2 or A0.shape[0] != A0.shape[1]:
            raise DimensionMismatch(f"A0 must be square, got {A0.shape}")
        n = A0.shape[0]
        if A.shape != (r, n, n):
            raise DimensionMismatch(f"A has shape {A.shape}, expected {(r, n, n)}")
        p = bounds.shape[0]
        if B.size == 0:
            B = B.reshape(p, r, n, n)
        if B.shape != (p, r, n, n):
            raise DimensionMismatch(f"B has shape {B.shape}, expected {(p, r, n, n)}")
        if np.any(bounds[:, 0] > bounds[:, 1]):
            raise ControlOutOfBounds(f"empty control interval in {bounds.tolist()}")
        for arr in (C, A0, A, B, bounds):
            arr.setflags(write=False)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "A0", A0)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "bounds", bounds)

    @property
    def r(self):
        return self.C.shape[0]

    @property
    def n(self):
        return self.A0.shape[0]

    @property
    def p(self):
        return self.bounds.shape[0]

    def vertices(self):
        """All corners of the control box, shape (2**p, p)."""
        if self.p == 0:
            return np.zeros((1, 0))
        grids = np.meshgrid(*self.bounds, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def midpoint(self):
        return self.bounds.mean(axis=1)

    def with_C(self, C):
        return CascadeModel(C, self.A0, self.A, self.B, self.bounds)

    def with_bounds(self, bounds):
        return CascadeModel(self.C, self.A0, self.A, self.B, bounds)

    def equals(self, other, tol=0.0):
        pairs = zip((self.C, self.A0, self.A, self.B, self.bounds),
                    (other.C, other.A0, other.A, other.B, other.bounds))
        return all(a.shape == b.shape and np.allclose(a, b, rtol=0, atol=tol) for a, b in pairs)


def _check_state(z, count, name="z"):
    if not 0 <= int(z) < count:
        raise BadState(f"{name}={z} outside [0, {count})")
    return int(z)


def check_bounds(model, u):
    u = np.asarray(u, dtype=float).reshape(model.p)
    lo, hi = model.bounds[:, 0], model.bounds[:, 1]
    if np.any(u < lo - BOUNDS_TOL) or np.any(u > hi + BOUNDS_TOL):
        raise ControlOutOfBounds(f"control {u.tolist()} outside {model.bounds.tolist()}")
    return u


def controlled_part(model, z, u):
    """``A[z] + sum_j u_j B[j, z]`` without the shared base generator."""
    return model.A[z] + np.tensordot(u, model.B[:, z], axes=1)


def assemble_generator(model, z, u):
    """Controlled-chain generator ``A0 + A(z) + sum_j u_j B_j(z)``."""
    z = _check_state(z, model.r)
    u = check_bounds(model, u)
    return check_generator(model.A0 + controlled_part(model, z, u))


@dataclass(frozen=True)
class Violation:
    what: str
    z: int | None
    vertex: tuple | None
    row: int
    column: int
    value: float

    def __str__(self):
        where = f"z={self.z}, " if self.z is not None else ""
        if self.vertex is not None:
            where += f"u={list(self.vertex)}, "
        entry = f"column {self.column}" if self.row < 0 else f"entry ({self.row}, {self.column})"
        return f"{self.what}: {where}{entry} = {self.value:.6g}"


@dataclass(frozen=True)
class AdmissibilityReport:
    violations: tuple = ()

    @property
    def ok(self):
        return not self.violations

    @property
    def first(self):
        return self.violations[0] if self.violations else None

    def __bool__(self):
        return self.ok


def _generator_violations(M, what, z=None, vertex=None, tol=GENERATOR_TOL):
    out = []
    sums = M.sum(axis=0)
    for col in np.flatnonzero(np.abs(sums) > tol):
        out.append(Violation(f"{what} column sum", z, vertex, -1, int(col), float(sums[col])))
    off = M - np.diag(np.diag(M))
    for row, col in np.argwhere(off < -tol):
        out.append(Violation(f"{what} negative rate", z, vertex, int(row), int(col), float(M[row, col])))
    return out


def check_admissible(model, tol=GENERATOR_TOL):
    """Verify every model invariant, checking the control box at its vertices.

    Affinity in u makes vertex checks sufficient for the whole box.
    """
    found = []
    found += _generator_violations(model.C, "C", tol=tol)
    found += _generator_violations(model.A0, "A0", tol=tol)
    for z in range(model.r):
        found += _generator_violations(model.A0 + model.A[z], "A0+A(z)", z=z, tol=tol)
        for j in range(model.p):
            sums = model.B[j, z].sum(axis=0)
            for col in np.flatnonzero(np.abs(sums) > tol):
                found.append(Violation(f"B[{j}] column sum", z, None, -1, int(col), float(sums[col])))
        for v in model.vertices():
            P = model.A0 + controlled_part(model, z, v)
            found += _generator_violations(P, "P(z,u)", z=z, vertex=tuple(float(x) for x in v), tol=tol)
    return AdmissibilityReport(tuple(found))


class Policy:
    """Feedback control ``u(t, z, x)``; out-of-box values are clamped and counted."""

    def __init__(self):
        self.violations = 0

    def raw(self, t, z, x):
        raise NotImplementedError

    def __call__(self, t, z, x, model=None):
        u = np.asarray(self.raw(t, z, x), dtype=float)
        if model is None:
            return u
        lo, hi = model.bounds[:, 0], model.bounds[:, 1]
        clipped = np.clip(u, lo, hi)
        if np.any(np.abs(clipped - u) > BOUNDS_TOL):
            self.violations += 1
        return clipped

    def table(self, t, model):
        """Controls for every (z, x) at time t, shape (r, n, p)."""
        return np.array([[self(t, z, x, model) for x in range(model.n)] for z in range(model.r)])


class ConstantPolicy(Policy):
    def __init__(self, u):
        super().__init__()
        self.u = np.atleast_1d(np.asarray(u, dtype=float))

    def raw(self, t, z, x):
        return self.u


class TabulatedPolicy(Policy):
    """Piecewise-constant lookup on an ascending grid, left-closed intervals.

    ``values`` has shape (len(grid), r, n, p).
    """

    def __init__(self, grid, values):
        super().__init__()
        self.grid = np.asarray(grid, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape[0] != self.grid.shape[0]:
            raise DimensionMismatch("policy table and grid lengths differ")

    def index(self, t):
        i = int(np.searchsorted(self.grid, t, side="right")) - 1
        return min(max(i, 0), len(self.grid) - 1)

    def raw(self, t, z, x):
        return self.values[self.index(t), z, x]

    def table(self, t, model):
        raw = self.values[self.index(t)]
        clipped = np.clip(raw, model.bounds[:, 0], model.bounds[:, 1])
        if np.any(np.abs(clipped - raw) > BOUNDS_TOL):
            self.violations += 1
        return clipped


class ClosedFormPolicy(Policy):
    def __init__(self, fn):
        super().__init__()
        self.fn = fn

    def raw(self, t, z, x):
        return np.atleast_1d(self.fn(t, z, x))


def controlled_generators(model, U):
    """Per-driver controlled generators for a control table ``U[z, x, :]``.

    Column x of block z uses ``U[z, x]``; returns shape (r, n, n).
    """
    U = np.asarray(U, dtype=float).reshape(model.r, model.n, model.p)
    # Column x of B_j(z) weighted by u_j(z, x).
    Bu = np.einsum("jzik,zkj->zik", model.B, U)
    return model.A0[None] + model.A + Bu


def joint_generator(model, U):
    """Joint (r*n) generator for a control table ``U[z, x, :]``."""
    r, n = model.r, model.n
    blocks = controlled_generators(model, U)
    P = kron(model.C, np.eye(n))
    for z in range(r):
        P[z * n:(z + 1) * n, z * n:(z + 1) * n] += blocks[z]
    return P


_COUPLING_ORDER = (CouplingClass.UNCOUPLED, CouplingClass.CASCADE,
                   CouplingClass.DECOMPOSABLE, CouplingClass.NON_DECOMPOSABLE)


def model_coupling(model):
    """Strongest coupling of the joint chain over constant controls at the box corners."""
    worst = CouplingClass.UNCOUPLED
    for v in list(model.vertices()) + [model.midpoint()]:
        U = np.broadcast_to(v, (model.r, model.n, model.p))
        P = joint_generator(model, U)
        found = classify_coupling(jumps_from_generator(P), model.r, model.n)
        worst = max(worst, found, key=_COUPLING_ORDER.index)
    return worst


def lift_to_joint(model, policy, t):
    """Joint generator ``C (x) I + sum_z E_z (x) P(z, u(t, z, .))``."""
    P = joint_generator(model, policy.table(t, model))
    try:
        return check_generator(P)
    except GeneratorInvalid as exc:
        raise ControlOutOfBounds(str(exc)) from exc


@dataclass(frozen=True, eq=False)
class TriangularForm:
    """Rank-one structure where all control enters through one column.

    ``a[z]`` and ``b[j, z]`` are the designated columns of ``A(z)`` and
    ``B_j(z)``.  When ``valid`` the x-marginal obeys
    ``p' = (A0 + sum_z c_z (A(z) + u(z) B(z))) p``.
    """

    valid: bool
    column: int | None = None
    A0: np.ndarray | None = None
    a: np.ndarray | None = None
    b: np.ndarray | None = None

    def marginal_generator(self, c, u):
        """Marginal x-generator for driver marginal ``c`` and open-loop ``u[z, j]``."""
        if not self.valid:
            raise ValueError("triangular form is not valid for this model")
        c = np.asarray(c, dtype=float)
        u = np.asarray(u, dtype=float).reshape(len(c), -1)
        col = self.a + np.einsum("zj,jzi->zi", u, self.b)
        M = self.A0.copy()
        M[:, self.column] += c @ col
        return M


def triangular_form(model, tol=0.0):
    """Detect the single-column control structure.

    Besides every A(z), B_j(z) living in one shared column k, the exit rate
    from k must not depend on z; this keeps ``Pr(x = k)`` independent of z so
    the marginal closes.
    """
    n = model.n
    mats = [model.A[z] for z in range(model.r)] + [model.B[j, z] for j in range(model.p) for z in range(model.r)]
    support = set()
    for M in mats:
        support.update(int(k) for k in np.flatnonzero(np.any(np.abs(M) > tol, axis=0)))
    if len(support) > 1:
        return TriangularForm(False)
    k = support.pop() if support else n - 1
    exits = model.A[:, k, k]
    if np.ptp(exits) > tol or (model.p and np.ptp(model.B[:, :, k, k], axis=1).max() > tol):
        return TriangularForm(False)
    return TriangularForm(
        True, k, model.A0.copy(), model.A[:, :, k].copy(), model.B[:, :, :, k].copy()
    )


class DiagonalizableVerdict(Enum):
    HOLDS_BY_C1 = "holds_by_C1"
    HOLDS_BY_C2 = "holds_by_C2"
    UNKNOWN = "unknown"

    def __str__(self):
        return self.value


def _z_independent(arr, axis, tol):
    return arr.shape[axis] == 0 or bool(np.all(np.abs(arr - arr.take([0], axis=axis)) <= tol))


def diagonalizable_sufficient(model, feedback_on_z, tol=0.0):
    """Decidable sufficient conditions for the joint chain to be diagonalizable.

    C1: A and every B_j independent of z and no feedback on z.
    C2: A independent of z and every B_j identically zero, so the controlled
    generator cannot vary with z whatever the control does.
    The remaining distribution-dependent condition is not decided.
    """
    a_same = _z_independent(model.A, 0, tol)
    b_same = _z_independent(model.B, 1, tol)
    if a_same and b_same and not feedback_on_z:
        return DiagonalizableVerdict.HOLDS_BY_C1
    if a_same and not np.any(np.abs(model.B) > tol):
        return DiagonalizableVerdict.HOLDS_BY_C2
    return DiagonalizableVerdict.UNKNOWN
