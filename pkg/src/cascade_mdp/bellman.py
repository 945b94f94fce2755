"""
Backward solvers for the finite-horizon expected-cost problem on a cascade.

The minimum return function is stored as an (n, r) matrix ``K(t)`` with
``k(t, z, x) = K[x, z]``.  It solves

    K' = -K C - L(t) - [ (A0 + A(z))' K[:, z] ]_z - M(K),
    M[x, z] = min_u sum_j u_j sigma_j[x, z] + psi(u),
    sigma_j[:, z] = B_j(z)' K[:, z],

backward from ``K(T) = Phi``.  Every solver here uses the same fixed-step
classical Runge-Kutta scheme so results can be compared to round-off.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import expm

from ._integrate import rk4_step, step_grid
from .cost import CostSpec
from .errors import (
    CustomPsiDimension,
    DimensionMismatch,
    NonAdmissibleModel,
    PreconditionNotMet,
    StepTooLarge,
    TimeOutOfRange,
)
from .model import DiagonalizableVerdict, TabulatedPolicy, check_admissible, diagonalizable_sufficient

BLOWUP = 1e12
CUSTOM_GRID = 101
TIE_TOL = 1e-12


# -- pointwise minimisation ---------------------------------------------------

def _box_grid(bounds, points):
    axes = [np.linspace(lo, hi, points) for lo, hi in bounds]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


class Minimizer:
    """Pointwise ``argmin_u u . sigma + psi(u)`` over the control box.

    ``sigma`` has the control index first, any trailing shape after it.
    """

    def __init__(self, bounds, psi, grid_points=CUSTOM_GRID):
        self.bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
        self.psi = psi
        self.lo = self.bounds[:, 0]
        self.hi = self.bounds[:, 1]
        self.mid = self.bounds.mean(axis=1)
        self._shaped = {}
        if not isinstance(psi, str):
            if len(self.bounds) > 2:
                raise CustomPsiDimension(f"custom control cost supports p <= 2, got p = {len(self.bounds)}")
            self.grid = _box_grid(self.bounds, grid_points)
            self.grid_cost = np.array([psi(u) for u in self.grid])

    def _expand(self, sigma):
        """``lo, hi, mid`` reshaped to broadcast against ``sigma``; cached per rank."""
        shaped = self._shaped.get(sigma.ndim)
        if shaped is None:
            shape = (-1,) + (1,) * (sigma.ndim - 1)
            shaped = self._shaped[sigma.ndim] = tuple(v.reshape(shape) for v in (self.lo, self.hi, self.mid))
        return shaped

    def minimum(self, sigma):
        """Minimum value only; cheaper than :meth:`__call__` for bang-bang costs."""
        if self.psi != "zero" or sigma.shape[0] == 0:
            return self(sigma)[1]
        lo, hi, _ = self._expand(sigma)
        return np.minimum(lo * sigma, hi * sigma).sum(axis=0)

    def __call__(self, sigma):
        """Return ``(U, M)``: minimising controls (shape of sigma) and minimum values."""
        sigma = np.asarray(sigma, dtype=float)
        if sigma.shape[0] == 0:
            return sigma.copy(), np.zeros(sigma.shape[1:])
        lo, hi, mid = self._expand(sigma)
        if self.psi == "zero":
            scale = TIE_TOL * max(1.0, float(np.abs(sigma).max()))
            U = np.where(sigma > scale, lo, np.where(sigma < -scale, hi, mid))
            M = np.minimum(lo * sigma, hi * sigma).sum(axis=0)
            return U, M
        if self.psi == "quadratic":
            U = np.clip(-0.5 * sigma, lo, hi)
            return U, (U * sigma + U * U).sum(axis=0)
        flat = sigma.reshape(sigma.shape[0], -1)
        vals = self.grid @ flat + self.grid_cost[:, None]
        best = np.argmin(vals, axis=0)
        U = self.grid[best].T.reshape(sigma.shape)
        M = vals[best, np.arange(flat.shape[1])].reshape(sigma.shape[1:])
        return U, M

    def cost(self, U):
        """``psi`` evaluated over the leading control axis of ``U``."""
        if self.psi == "zero":
            return np.zeros(U.shape[1:])
        if self.psi == "quadratic":
            return (U * U).sum(axis=0)
        flat = U.reshape(U.shape[0], -1)
        return np.array([self.psi(u) for u in flat.T]).reshape(U.shape[1:])


# -- structure helpers ---------------------------------------------------------

def _drift(model):
    """``A0 + A(z)`` stacked over z, shape (r, n, n)."""
    return model.A0[None] + model.A


def switching(model, K):
    """``sigma[j, x, z] = (B_j(z)' K[:, z])[x]``."""
    return np.einsum("jzix,iz->jxz", model.B, K)


def _adjoint(drift, K):
    return np.einsum("zik,iz->kz", drift, K)


def _check_inputs(model, cost, T, dt, require_admissible=True):
    if cost.shape != (model.n, model.r):
        raise DimensionMismatch(f"cost shape {cost.shape} != {(model.n, model.r)}")
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T}")
    if require_admissible:
        report = check_admissible(model)
        if not report.ok:
            raise NonAdmissibleModel(str(report.first))
    return step_grid(0.0, T, dt)


def _backward(rhs, yT, grid, guard):
    """Integrate backward from ``grid[-1]`` and return states in ascending order."""
    out = np.empty((len(grid),) + yT.shape)
    y = yT.copy()
    out[-1] = y
    for i in range(len(grid) - 1, 0, -1):
        y = rk4_step(rhs, grid[i], y, grid[i - 1] - grid[i])
        if not np.all(np.isfinite(y)) or np.max(np.abs(y), initial=0.0) > BLOWUP:
            raise StepTooLarge(f"{guard} exceeded {BLOWUP:g} at t={grid[i - 1]:.6g}; reduce dt")
        out[i - 1] = y
    return out


# -- solutions -----------------------------------------------------------------

@dataclass(eq=False)
class BellmanSolution:
    """Minimum return matrices on an ascending grid.

    Attributes
    ----------
    grid : (m,) array
    K : (m, n, r) array
    """

    grid: np.ndarray
    K: np.ndarray
    model: object
    cost: CostSpec
    minimizer: Minimizer = field(repr=False, default=None)

    @property
    def T(self):
        return float(self.grid[-1])

    def K_at(self, t):
        """Linear interpolation of K between grid points."""
        if t < self.grid[0] - 1e-12 or t > self.grid[-1] + 1e-12:
            raise TimeOutOfRange(f"t={t} outside [{self.grid[0]}, {self.grid[-1]}]")
        i = int(np.searchsorted(self.grid, t, side="right")) - 1
        i = min(max(i, 0), len(self.grid) - 2) if len(self.grid) > 1 else 0
        if len(self.grid) == 1:
            return self.K[0]
        w = (t - self.grid[i]) / (self.grid[i + 1] - self.grid[i])
        w = min(max(w, 0.0), 1.0)
        return (1 - w) * self.K[i] + w * self.K[i + 1]

    def controls(self, K):
        """Optimal controls for a given K, shape (r, n, p)."""
        U, _ = self.minimizer(switching(self.model, K))
        return np.transpose(U, (2, 1, 0))

    def control_table(self):
        """Optimal controls at every grid point, shape (m, r, n, p)."""
        sigma = np.einsum("jzix,tiz->jtxz", self.model.B, self.K)
        U, _ = self.minimizer(sigma)
        return np.transpose(U, (1, 3, 2, 0))

    def policy(self):
        return TabulatedPolicy(self.grid, self.control_table())

    def value(self, z0, x0):
        return optimal_value(self, z0, x0)


def optimal_control(sol, t, z, x):
    """Minimising control at time t in state (z, x)."""
    K = sol.K_at(t)
    sigma = sol.model.B[:, z, :, x] @ K[:, z]
    U, _ = sol.minimizer(sigma.reshape(-1, 1))
    return U[:, 0]


def _weights(v, count):
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        w = np.zeros(count)
        w[int(v)] = 1.0
        return w
    if v.shape != (count,):
        raise DimensionMismatch(f"distribution length {v.shape} != {count}")
    return v


def optimal_value(sol, z0, x0):
    """``eta* = E z(0)' K(0)' x(0)``; states may be indices or distributions."""
    wz = _weights(z0, sol.K.shape[2])
    wx = _weights(x0, sol.K.shape[1])
    return float(wx @ sol.K[0] @ wz)


def solve_bellman(model, cost, T, dt=1e-3, grid_points=CUSTOM_GRID):
    """Decoupled matrix Bellman equation integrated backward from ``K(T) = Phi``.

    Returns
    -------
    BellmanSolution
    """
    grid = _check_inputs(model, cost, T, dt)
    minimizer = Minimizer(model.bounds, cost.psi, grid_points)
    # Work on K' (r, n) so every driver column is one row of a batched matmul:
    # ops[0, z] = (A0 + A(z))' and ops[1 + j, z] = B_j(z)'.
    ops = np.concatenate([_drift(model)[None], model.B], axis=0).transpose(0, 1, 3, 2).copy()
    CT = model.C.T.copy()
    LT = cost.L.T.copy() if cost.time_invariant and not cost.alpha else None

    def rhs(t, KT):
        out = np.matmul(ops, KT[None, :, :, None])[..., 0]
        M = minimizer.minimum(out[1:])
        run = LT if LT is not None else cost.running(t).T
        return -(CT @ KT) - run - out[0] - M

    KT = _backward(rhs, cost.terminal(grid[-1]).T.copy(), grid, "K")
    return BellmanSolution(grid, KT.transpose(0, 2, 1).copy(), model, cost, minimizer)


# -- coupled baseline ----------------------------------------------------------

@dataclass(eq=False)
class JointSolution:
    """Value vector ``k[(z, x)]`` of the joint chain, index ``z * n + x``."""

    grid: np.ndarray
    k: np.ndarray
    r: int
    n: int

    def as_matrices(self):
        """Same data in the decoupled (m, n, r) layout."""
        return np.transpose(self.k.reshape(len(self.grid), self.r, self.n), (0, 2, 1))

    def value(self, z0, x0):
        return float(self.k[0, int(z0) * self.n + int(x0)])


def _block_diag(blocks):
    r, n, _ = blocks.shape
    out = np.zeros((r * n, r * n))
    for z in range(r):
        out[z * n:(z + 1) * n, z * n:(z + 1) * n] = blocks[z]
    return out


def solve_coupled_baseline(model, cost, T, dt=1e-3, grid_points=CUSTOM_GRID):
    """Single-chain Bellman equation on the joint (r*n)-state chain.

    Ignores the cascade structure, as a generic solver would: at every
    evaluation the dense closed-loop joint generator ``P(u)`` is formed from
    the minimising controls and applied to the value vector.
    """
    grid = _check_inputs(model, cost, T, dt)
    r, n, p = model.r, model.n, model.p
    N = r * n
    minimizer = Minimizer(model.bounds, cost.psi, grid_points)
    P0 = np.kron(model.C, np.eye(n)) + _block_diag(_drift(model))
    Bj = np.array([_block_diag(model.B[j]) for j in range(p)]).reshape(p, N, N)
    BT = Bj.transpose(0, 2, 1).reshape(p * N, N).copy()
    l_const = None if not (cost.time_invariant and not cost.alpha) else cost.L.T.reshape(-1).copy()

    def rhs(t, k):
        sigma = (BT @ k).reshape(p, N)
        U, _ = minimizer(sigma)
        # Column s of the closed-loop generator uses the control chosen at s.
        P = P0 + (Bj * U[:, None, :]).sum(axis=0)
        l = l_const if l_const is not None else cost.running(t).T.reshape(-1)
        return -(k @ P) - l - minimizer.cost(U)

    k = _backward(rhs, cost.terminal(grid[-1]).T.reshape(-1).copy(), grid, "k")
    return JointSolution(grid, k, r, n)


# -- partial feedback ----------------------------------------------------------

@dataclass(eq=False)
class PartialFeedbackSolution(BellmanSolution):
    """Bellman solution for controls that see x only.

    ``U`` holds the control per grid point and x, shape (m, n, p); ``pz`` the
    driver marginal on the grid.
    """

    U: np.ndarray = None
    pz: np.ndarray = None

    def control_table(self):
        return np.repeat(self.U[:, None], self.model.r, axis=1)

    def value(self, z0=None, x0=0):
        z0 = self.pz[0] if z0 is None else z0
        return optimal_value(self, z0, x0)


def driver_marginal(C, pz0):
    """Exact ``p_z(t) = expm(C t) p_z(0)`` as a callable."""
    C = np.asarray(C, dtype=float)
    pz0 = np.asarray(pz0, dtype=float)
    return lambda t: expm(C * t) @ pz0


def solve_partial_feedback(model, cost, T, pz0, dt=1e-3, grid_points=CUSTOM_GRID):
    """Bellman equation for controls that depend on (t, x) only.

    The driver marginal ``p_z`` is autonomous, so it is computed first.  At
    each time the control for state x minimises the ``p_z``-weighted switching
    term ``sum_z p_z[z] (u . sigma[:, x, z] + psi(u))``; every column of K is
    then propagated under that common control.
    """
    grid = _check_inputs(model, cost, T, dt)
    pz0 = _weights(pz0, model.r)
    pz_of = driver_marginal(model.C, pz0)
    minimizer = Minimizer(model.bounds, cost.psi, grid_points)
    drift = _drift(model)
    C = model.C

    def control(t, K):
        sigma = switching(model, K)
        U, _ = minimizer(sigma @ pz_of(t))
        return sigma, U

    def rhs(t, K):
        sigma, U = control(t, K)
        M = np.einsum("jxz,jx->xz", sigma, U) + minimizer.cost(U)[:, None]
        return -(K @ C) - cost.running(t) - _adjoint(drift, K) - M

    K = _backward(rhs, cost.terminal(grid[-1]), grid, "K")
    U = np.array([control(t, Kt)[1].T for t, Kt in zip(grid, K)])
    pz = np.array([pz_of(t) for t in grid])
    return PartialFeedbackSolution(grid, K, model, cost, minimizer, U=U, pz=pz)


# -- diagonalizable reductions -------------------------------------------------

class ReduceMode(Enum):
    C1 = "C1"
    CWEIGHTED = "Cweighted"


@dataclass(eq=False)
class VectorSolution:
    """Single-chain value vector ``k(t)`` on the x states."""

    grid: np.ndarray
    k: np.ndarray

    def value(self, x0):
        return float(_weights(x0, self.k.shape[1]) @ self.k[0])


def solve_diagonalizable(model, cost, T, dt=1e-3, mode="C1", c=None, grid_points=CUSTOM_GRID):
    """Reduced n-vector Bellman equation for diagonalizable cascades.

    ``C1`` needs z-independent A, B and a z-independent cost.  ``Cweighted``
    averages A, B, L and Phi with a stationary driver distribution ``c``.
    """
    mode = ReduceMode(mode)
    grid = _check_inputs(model, cost, T, dt)
    if mode is ReduceMode.C1:
        if diagonalizable_sufficient(model, False) is not DiagonalizableVerdict.HOLDS_BY_C1:
            raise PreconditionNotMet("A and B must not depend on z")
        if not cost.time_invariant:
            L0 = cost.running(0.0)
        else:
            L0 = cost.L
        for name, M in (("L", L0), ("Phi", cost.Phi)):
            if np.ptp(M, axis=1).max(initial=0.0) > 0:
                raise PreconditionNotMet(f"{name} depends on z")
        w = np.zeros(model.r)
        w[0] = 1.0
    else:
        if c is None:
            raise PreconditionNotMet("Cweighted mode needs a stationary driver distribution")
        w = _weights(c, model.r)
        if abs(w.sum() - 1) > 1e-9 or np.max(np.abs(model.C @ w)) > 1e-9:
            raise PreconditionNotMet("c is not a stationary distribution of C")
    minimizer = Minimizer(model.bounds, cost.psi, grid_points)
    drift = np.einsum("z,zik->ik", w, _drift(model))
    driftT = drift.T.copy()
    B = np.einsum("z,jzik->jik", w, model.B)

    def rhs(t, k):
        _, M = minimizer(np.einsum("jix,i->jx", B, k))
        return -(driftT @ k) - cost.running(t) @ w - M

    k = _backward(rhs, cost.terminal(grid[-1]) @ w, grid, "k")
    return VectorSolution(grid, k)


# -- costate check -------------------------------------------------------------

def costate_verify(model, cost, sol):
    """Integrate the costate equations under the policy induced by ``sol``.

    For driver state i the costate obeys

        q_i' = -(A0 + A_i + sum_j B_ij D_ij(t))' q_i - l_i - psi_i - (Q C) e_i

    with ``D_ij`` the diagonal of controls ``u_j(t, e_i, .)`` taken from the
    Bellman solution.  Returns ``max_t,i |q_i(t) - K(t) e_i|``.
    """
    drift = _drift(model)
    minimizer = sol.minimizer

    def rhs(t, Q):
        U, _ = minimizer(switching(model, sol.K_at(t)))
        # (B_ij D_ij)' q_i at entry x is u_j(i, x) * (B_ij' q_i)[x].
        ctrl = np.einsum("jxz,jxz->xz", switching(model, Q), U) + minimizer.cost(U)
        return -_adjoint(drift, Q) - ctrl - cost.running(t) - Q @ model.C

    grid = sol.grid
    Q = _backward(rhs, cost.terminal(grid[-1]), grid, "q")
    return float(np.max(np.abs(Q - sol.K)))
