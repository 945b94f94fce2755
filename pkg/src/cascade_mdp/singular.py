"""
Steady-state diversification problems on the binary-choice cascade.

With a stationary driver distribution ``c`` and open-loop controls ``u_z``
the outcome chain has generator ``X(u) = A0 + sum_z c_z (A(z) + u_z B(z))``.
Its steady state is affine in u over the food states, which turns the
long-run criterion ``|Q p - m|^2`` into a box-constrained quadratic program.
"""

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linprog
from scipy.sparse.csgraph import connected_components

from ._integrate import rk4_step, step_grid
from .errors import BoxViolation, GridTooLarge, InvalidStep, Reducible, SingularSolve
from .zoo import binary_decision

PG_STEP_CAP = 100_000
PG_TOL = 1e-12
POLISH_EVERY = 100
ZERO_ETA = 1e-8


# -- steady states ---------------------------------------------------------------

def _closed_classes(X):
    off = (np.abs(X) > 0) & ~np.eye(len(X), dtype=bool)
    # Edge source -> target where X[target, source] > 0.
    adj = off.T
    count, labels = connected_components(adj, directed=True, connection="strong")
    closed = []
    for k in range(count):
        members = labels == k
        leaves = adj[members][:, ~members].any()
        if not leaves:
            closed.append(np.flatnonzero(members))
    return closed


def steady_state(X, tol=1e-10):
    """Stationary distribution ``(e e' + X' X)^{-1} e`` of a generator.

    Raises
    ------
    Reducible
        If the chain has more than one closed class, so the stationary
        distribution is not unique.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if len(_closed_classes(X)) != 1:
        raise Reducible("generator has more than one closed communicating class")
    e = np.ones(n)
    try:
        p = np.linalg.solve(np.outer(e, e) + X.T @ X, e)
    except np.linalg.LinAlgError as exc:
        raise SingularSolve(str(exc)) from exc
    if np.max(np.abs(X @ p)) > tol or abs(p.sum() - 1) > tol:
        raise SingularSolve(f"steady-state residual {np.max(np.abs(X @ p)):.3g} too large")
    return np.clip(p, 0.0, None)


@dataclass
class RankOneResult:
    p: np.ndarray
    formula_used: bool
    residual: float


def rank_one_steady(A, f, j, u, tol=1e-8, info=False):
    """Steady state of ``A + u f e_j'`` from the unperturbed one.

    Uses ``p = p0 - p0[j] u A^+ f / (1 + u (A^+ f)[j])`` and renormalises; falls
    back to a direct solve when the update's residual exceeds ``tol``.
    """
    A = np.asarray(A, dtype=float)
    f = np.asarray(f, dtype=float)
    p0 = steady_state(A)
    g = np.linalg.pinv(A, rcond=1e-10) @ f
    P = A + u * np.outer(f, np.eye(len(f))[j])
    denom = 1.0 + u * g[j]
    used = abs(denom) > 1e-14
    if used:
        p = p0 - p0[j] * u * g / denom
        p = p / p.sum()
        residual = float(np.max(np.abs(P @ p)))
        used = residual < tol and np.all(p > -tol)
    if not used:
        p = steady_state(P)
        residual = float(np.max(np.abs(P @ p)))
    p = np.clip(p, 0.0, None)
    return RankOneResult(p, bool(used), residual) if info else p


# -- cat steady state --------------------------------------------------------------

def _check_box(u, lo=-0.5, hi=0.5):
    u = np.asarray(u, dtype=float)
    if np.any(u < lo - 1e-12) or np.any(u > hi + 1e-12):
        raise BoxViolation(f"control {u.tolist()} outside [{lo}, {hi}]")
    return u


def outcomes_for(c):
    """Number of outcomes N with ``len(c) = N (N - 1) / 2``."""
    r = len(c)
    N = int(round((1 + math.sqrt(1 + 8 * r)) / 2))
    if N * (N - 1) // 2 != r:
        raise ValueError(f"{r} driver states do not match any outcome count")
    return N


def averaged_generator(c, u, f=1.0, s=1.0):
    """``A0 + sum_z c_z (A(z) + u_z B(z))`` for the binary-choice model."""
    c = np.asarray(c, dtype=float)
    u = _check_box(np.broadcast_to(u, c.shape))
    model = binary_decision(outcomes_for(c), f=f, s=s).model
    return model.A0 + np.einsum("z,zik->ik", c, model.A + u[:, None, None] * model.B[0])


def cat_X(c, u):
    """Averaged outcome generator for three foods."""
    if len(c) != 3:
        raise ValueError("cat_X expects three driver probabilities")
    return averaged_generator(c, u)


def cat_p(c, u):
    """Closed-form steady probabilities of the three food states."""
    c1, c2, c3 = np.asarray(c, dtype=float)
    u1, u2, u3 = _check_box(u)
    return 0.5 * np.array([
        c3 * (u3 + 0.5) - c2 * (u2 - 0.5),
        c1 * (u1 + 0.5) - c3 * (u3 - 0.5),
        c2 * (u2 + 0.5) - c1 * (u1 - 0.5),
    ])


def diversity_target(N):
    """``Q = diag(1, .., 1, 0)`` and ``m = (1/(2N)) (1, .., 1, 0)``."""
    Q = np.diag(np.r_[np.ones(N), 0.0])
    m = np.r_[np.full(N, 1.0 / (2 * N)), 0.0]
    return Q, m


# -- quadratic program -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QpProblem:
    """``min 1/2 u'Hu + f'u + k`` over a box, equal to ``|A u / 2 + b|^2``."""

    H: np.ndarray
    f: np.ndarray
    k: float
    A: np.ndarray
    b: np.ndarray
    bounds: np.ndarray
    c: np.ndarray

    def objective(self, u):
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ self.H @ u + self.f @ u + self.k)

    def residual(self, u):
        return 0.5 * self.A @ np.asarray(u, dtype=float) + self.b


def build_qp(c, bounds=(-0.5, 0.5)):
    c = np.asarray(c, dtype=float)
    if c.shape != (3,) or np.any(c < -1e-12) or abs(c.sum() - 1) > 1e-9:
        raise ValueError(f"c must be a distribution on three states, got {c}")
    c1, c2, c3 = c
    A = np.array([[0, -c2, c3], [c1, 0, -c3], [-c1, c2, 0]])
    b = -1 / 6 + 0.25 * np.array([c3 + c2, c1 + c3, c2 + c1])
    box = np.tile(np.asarray(bounds, dtype=float), (3, 1))
    return QpProblem(0.5 * A.T @ A, A.T @ b, float(b @ b), A, b, box, c)


class QpClass(Enum):
    INTERIOR_ZERO = "InteriorZero"
    BOUNDARY_POSITIVE = "BoundaryPositive"

    def __str__(self):
        return self.value


@dataclass
class QpSolution:
    u0: np.ndarray
    eta_star: float
    active: np.ndarray  # -1 lower bound, +1 upper bound, 0 free
    classification: QpClass
    iterations: int
    converged: bool = True


def _active_mask(u, lo, hi, tol=1e-12):
    return np.where(u <= lo + tol, -1, np.where(u >= hi - tol, 1, 0))


def _kkt_ok(qp, u, tol=1e-10):
    lo, hi = qp.bounds[:, 0], qp.bounds[:, 1]
    g = qp.H @ u + qp.f
    mask = _active_mask(u, lo, hi)
    scale = 1.0 + np.max(np.abs(qp.f), initial=0.0)
    free_ok = np.all(np.abs(g[mask == 0]) <= tol * scale)
    lower_ok = np.all(g[mask == -1] >= -tol * scale)
    upper_ok = np.all(g[mask == 1] <= tol * scale)
    return bool(free_ok and lower_ok and upper_ok)


def _polish(qp, u):
    """Snap to the stationary set of the current face, nearest to ``u``."""
    lo, hi = qp.bounds[:, 0], qp.bounds[:, 1]
    mask = _active_mask(u, lo, hi, tol=1e-9)
    v = np.where(mask == -1, lo, np.where(mask == 1, hi, u))
    free = mask == 0
    if free.any():
        g = qp.H @ v + qp.f
        HFF = qp.H[np.ix_(free, free)]
        v[free] = v[free] - np.linalg.pinv(HFF, rcond=1e-12) @ g[free]
    if np.any(v < lo - 1e-14) or np.any(v > hi + 1e-14):
        return None
    v = np.clip(v, lo, hi)
    return v if _kkt_ok(qp, v) else None


def _faces(dim):
    return itertools.product((-1, 0, 1), repeat=dim)


def _enumerate_faces(qp):
    """Exact minimum by checking the stationary point of every face."""
    lo, hi = qp.bounds[:, 0], qp.bounds[:, 1]
    best, best_val = None, math.inf
    for face in _faces(len(lo)):
        face = np.array(face)
        v = np.where(face == -1, lo, np.where(face == 1, hi, 0.0))
        free = face == 0
        if free.any():
            g = qp.H @ v + qp.f
            v[free] = -np.linalg.pinv(qp.H[np.ix_(free, free)], rcond=1e-12) @ g[free]
        if np.any(v < lo - 1e-12) or np.any(v > hi + 1e-12):
            continue
        val = qp.objective(v)
        if val < best_val - 1e-15:
            best, best_val = np.clip(v, lo, hi), val
    return best


def _min_norm_optimizer(qp, u_star):
    """Smallest-norm point of ``{u in box : A u = A u_star}``, the optimal set."""
    lo, hi = qp.bounds[:, 0], qp.bounds[:, 1]
    w = qp.A @ u_star
    tol = 1e-10 * (1.0 + np.max(np.abs(w)))
    best, best_norm = u_star, float(u_star @ u_star)
    for face in _faces(len(lo)):
        face = np.array(face)
        v = np.where(face == -1, lo, np.where(face == 1, hi, 0.0))
        free = face == 0
        rhs = w - qp.A @ v
        if free.any():
            v[free] = np.linalg.pinv(qp.A[:, free], rcond=1e-12) @ rhs
        if np.max(np.abs(qp.A @ v - w)) > tol:
            continue
        if np.any(v < lo - 1e-12) or np.any(v > hi + 1e-12):
            continue
        norm = float(v @ v)
        if norm < best_norm - 1e-15:
            best, best_norm = np.clip(v, lo, hi), norm
    return best


def solve_box_qp(qp, max_iter=PG_STEP_CAP, tol=PG_TOL):
    """Box-constrained QP by projected gradient with an exact face polish.

    Among the optimal set the minimum-norm point is returned.
    """
    lo, hi = qp.bounds[:, 0], qp.bounds[:, 1]
    if np.any(hi < lo):
        raise BoxViolation("empty box")
    step = 1.0 / (np.linalg.norm(qp.H, 2) + 1.0)
    u = np.clip(np.zeros(len(lo)), lo, hi)
    found, it = None, 0
    for it in range(1, max_iter + 1):
        g = qp.H @ u + qp.f
        nxt = np.clip(u - step * g, lo, hi)
        if np.linalg.norm(nxt - u) / step < tol:
            u = nxt
            found = u if _kkt_ok(qp, u) else _polish(qp, u)
            break
        u = nxt
        if it % POLISH_EVERY == 0:
            found = _polish(qp, u)
            if found is not None:
                break
    converged = found is not None
    if found is None:
        # Either the iteration cap was hit or the polish failed; fall back to
        # exact enumeration, which is cheap in three dimensions.
        found = _enumerate_faces(qp)
        converged = found is not None
        found = u if found is None else found
    u0 = _min_norm_optimizer(qp, found)
    eta = max(qp.objective(u0), 0.0)
    cls = QpClass.INTERIOR_ZERO if eta <= ZERO_ETA else QpClass.BOUNDARY_POSITIVE
    return QpSolution(u0, eta, _active_mask(u0, lo, hi), cls, it, converged)


def qp_oracle_grid(qp, step=0.01, refinements=2, max_points=10**8):
    """Brute-force minimum on a regular grid, then zoom x10 around the incumbent."""
    lo, hi = qp.bounds[:, 0], qp.bounds[:, 1]
    counts = []
    for a, b in zip(lo, hi):
        ratio = (b - a) / step
        k = int(round(ratio))
        if abs(ratio - k) > 1e-9 * max(1.0, ratio):
            raise InvalidStep(f"step {step} does not divide [{a}, {b}]")
        counts.append(k + 1)
    if math.prod(counts) > max_points:
        raise GridTooLarge(f"{math.prod(counts)} grid points exceed {max_points}")

    def search(lo_, hi_, counts_):
        axes = [np.linspace(a, b, k) for a, b, k in zip(lo_, hi_, counts_)]
        mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=1)
        vals = np.sum((0.5 * mesh @ qp.A.T + qp.b) ** 2, axis=1)
        i = int(np.argmin(vals))
        return mesh[i], float(vals[i])

    u, eta = search(lo, hi, counts)
    h = step
    for _ in range(refinements):
        lo_r = np.maximum(lo, u - h)
        hi_r = np.minimum(hi, u + h)
        h /= 10
        counts_r = [int(round((b - a) / h)) + 1 if b > a else 1 for a, b in zip(lo_r, hi_r)]
        cand, val = search(lo_r, hi_r, counts_r)
        if val < eta:
            u, eta = cand, val
    return u, eta


def interior_margin(qp):
    """Largest t with ``A u = -2 b`` and ``lo + t <= u <= hi - t``; None if infeasible."""
    lo, hi = qp.bounds[:, 0], qp.bounds[:, 1]
    d = len(lo)
    cost = np.r_[np.zeros(d), -1.0]
    A_eq = np.c_[qp.A, np.zeros(d)]
    A_ub = np.r_[np.c_[np.eye(d), np.ones(d)], np.c_[-np.eye(d), np.ones(d)]]
    b_ub = np.r_[hi, -lo]
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=-2 * qp.b,
                  bounds=[(None, None)] * d + [(None, None)], method="highs")
    if res.status != 0:
        return None
    return float(res.x[-1])


def has_interior_solution(qp, tol=1e-12):
    t = interior_margin(qp)
    return t is not None and t > tol


@dataclass
class SweepRow:
    c: np.ndarray
    solution: QpSolution
    oracle_eta: float | None = None
    interior: bool | None = None


def simplex_points(resolution=20):
    pts = []
    for i in range(resolution + 1):
        for j in range(resolution + 1 - i):
            c1, c2 = i / resolution, j / resolution
            pts.append(np.array([c1, c2, max(1.0 - c1 - c2, 0.0)]))
    return pts


def sweep(resolution=20, oracle_step=None, claim=False):
    """Solve the QP on a regular grid of the driver simplex."""
    rows = []
    for c in simplex_points(resolution):
        qp = build_qp(c)
        row = SweepRow(c, solve_box_qp(qp))
        if oracle_step:
            row.oracle_eta = qp_oracle_grid(qp, oracle_step)[1]
        if claim:
            row.interior = has_interior_solution(qp)
        rows.append(row)
    return rows


# -- state and costate ---------------------------------------------------------------

@dataclass
class SingularDiagnostics:
    grid: np.ndarray
    p: np.ndarray
    q: np.ndarray
    H: np.ndarray
    sigma: np.ndarray

    def window(self, burn_in=0.25):
        """Mask discarding the first ``burn_in`` fraction of the horizon."""
        return self.grid >= self.grid[0] + burn_in * (self.grid[-1] - self.grid[0])


def _control_fn(u, r):
    if callable(u):
        return lambda t: _check_box(np.broadcast_to(u(t), (r,)))
    const = _check_box(np.broadcast_to(np.asarray(u, dtype=float), (r,)).copy())
    return lambda t: const


def state_costate_integrate(c, u, T, p0=None, qT=None, dt=1e-3, f=1.0, s=1.0):
    """Forward outcome marginal, backward costate, Hamiltonian and switching terms.

    ``H = |Q p - m|^2 + q' X(u) p`` and ``sigma_z = c_z q' B(z) p``, the
    derivative of H with respect to ``u_z``.
    """
    c = np.asarray(c, dtype=float)
    N = outcomes_for(c)
    model = binary_decision(N, f=f, s=s).model
    n = N + 1
    Q, m = diversity_target(N)
    p0 = np.eye(n)[-1] if p0 is None else np.asarray(p0, dtype=float)
    qT = np.zeros(n) if qT is None else np.asarray(qT, dtype=float)
    grid = step_grid(0.0, T, dt)
    ctrl = _control_fn(u, len(c))
    base = model.A0 + np.einsum("z,zik->ik", c, model.A)
    Bc = c[:, None, None] * model.B[0]

    def X(t):
        return base + np.einsum("z,zik->ik", ctrl(t), Bc)

    p = np.empty((len(grid), n))
    p[0] = p0
    for i in range(len(grid) - 1):
        p[i + 1] = rk4_step(lambda t, y: X(t) @ y, grid[i], p[i], grid[i + 1] - grid[i])
    dp = np.array([X(t) @ pt for t, pt in zip(grid, p)])

    def p_at(t, i):
        # Cubic Hermite on [grid[i], grid[i+1]] with exact end slopes.
        h = grid[i + 1] - grid[i]
        s_ = (t - grid[i]) / h
        h00, h10 = 2 * s_**3 - 3 * s_**2 + 1, s_**3 - 2 * s_**2 + s_
        h01, h11 = -2 * s_**3 + 3 * s_**2, s_**3 - s_**2
        return h00 * p[i] + h10 * h * dp[i] + h01 * p[i + 1] + h11 * h * dp[i + 1]

    q = np.empty_like(p)
    q[-1] = qT
    for i in range(len(grid) - 1, 0, -1):
        def rhs(t, y, i=i):
            pt = p_at(t, i - 1)
            return -2 * Q.T @ (Q @ pt - m) - X(t).T @ y
        q[i - 1] = rk4_step(rhs, grid[i], q[i], grid[i - 1] - grid[i])

    resid = p @ Q.T - m
    H = np.sum(resid**2, axis=1) + np.einsum("ti,ti->t", q, dp)
    sigma = np.einsum("ti,zik,tk->tz", q, Bc, p)
    return SingularDiagnostics(grid, p, q, H, sigma)


def singular_closed_form(N, t):
    """Outcome marginals under zero control from the unfed state: ``(p_n, p_i)``."""
    if N < 2:
        raise ValueError("N must be at least 2")
    t = np.asarray(t, dtype=float)
    decay = np.exp(-2 * t)
    return 0.5 * (1 + decay), (1 - decay) / (2 * N)
