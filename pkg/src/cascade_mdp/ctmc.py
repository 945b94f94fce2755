"""
Finite-state continuous-time Markov chain primitives.

Probability vectors are columns evolving as ``p' = P p``; a generator ``P``
therefore has nonnegative off-diagonal rates and zero column sums, and
``P[target, source]`` is the rate of the jump ``source -> target``.

Product states (z, x) of an r-state driver and an n-state controlled chain
are flattened row-major, ``(i, j) -> i * n + j``, which is the index order
produced by ``np.kron(z, x)``.
"""

from collections import defaultdict
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ._integrate import integrate, step_grid
from .errors import (
    DimensionMismatch,
    GeneratorInvalid,
    IndexOutOfRange,
    InvalidStep,
    NegativeRate,
    SelfLoop,
)

GENERATOR_TOL = 1e-12
PROB_TOL = 1e-9


@dataclass(frozen=True)
class JumpMatrix:
    """The counter matrix ``F[target, source] - F[source, source]``."""

    source: int
    target: int
    dim: int

    def __post_init__(self):
        if self.dim <= 0:
            raise IndexOutOfRange(f"dimension must be positive, got {self.dim}")
        for name in ("source", "target"):
            v = getattr(self, name)
            if not 0 <= v < self.dim:
                raise IndexOutOfRange(f"{name}={v} outside [0, {self.dim})")
        if self.source == self.target:
            raise SelfLoop(f"jump {self.source} -> {self.target} is a self loop")

    def dense(self):
        G = np.zeros((self.dim, self.dim))
        G[self.target, self.source] = 1.0
        G[self.source, self.source] = -1.0
        return G


def jump_matrix(source, target, dim):
    return JumpMatrix(int(source), int(target), int(dim))


class CouplingClass(Enum):
    NON_DECOMPOSABLE = "NonDecomposable"
    DECOMPOSABLE = "Decomposable"
    CASCADE = "Cascade"
    UNCOUPLED = "Uncoupled"

    def __str__(self):
        return self.value


def check_generator(P, tol=GENERATOR_TOL, name="generator"):
    """Validate generator invariants and return ``P`` as a float array.

    Raises
    ------
    GeneratorInvalid
        If ``P`` is not square, has a column not summing to zero, or has a
        negative off-diagonal rate.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise GeneratorInvalid(f"{name} must be square, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise GeneratorInvalid(f"{name} has non-finite entries")
    sums = P.sum(axis=0)
    bad = np.flatnonzero(np.abs(sums) > tol)
    if bad.size:
        j = int(bad[0])
        raise GeneratorInvalid(f"{name} column {j} sums to {sums[j]:.3g}, not 0")
    off = P - np.diag(np.diag(P))
    neg = np.argwhere(off < -tol)
    if neg.size:
        i, j = (int(v) for v in neg[0])
        raise GeneratorInvalid(f"{name} has negative rate {P[i, j]:.3g} at ({i}, {j})")
    return P


def is_generator(P, tol=GENERATOR_TOL):
    try:
        check_generator(P, tol)
    except GeneratorInvalid:
        return False
    return True


def check_probability(p, tol=PROB_TOL):
    """Clamp round-off excursions and validate a probability vector."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise DimensionMismatch(f"probability vector must be 1-D, got shape {p.shape}")
    if np.any(p < -tol) or np.any(p > 1 + tol):
        raise ValueError(f"entries outside [0, 1]: {p}")
    if abs(p.sum() - 1.0) > tol:
        raise ValueError(f"probabilities sum to {p.sum()!r}")
    return np.clip(p, 0.0, 1.0)


def generator_from_jumps(pairs, dim=None):
    """Assemble ``P = sum_i G_i * rate_i``; repeated jumps merge by summing rates."""
    pairs = list(pairs)
    if dim is None:
        if not pairs:
            raise DimensionMismatch("dim is required for an empty jump list")
        dim = pairs[0][0].dim
    P = np.zeros((dim, dim))
    for G, rate in pairs:
        if G.dim != dim:
            raise DimensionMismatch(f"jump of dim {G.dim} in a dim-{dim} generator")
        if rate < 0:
            raise NegativeRate(f"rate {rate} for jump {G.source} -> {G.target}")
        P[G.target, G.source] += rate
        P[G.source, G.source] -= rate
    return P


def jumps_from_generator(P, tol=0.0):
    """Inverse of :func:`generator_from_jumps`: one (jump, rate) per positive rate."""
    P = np.asarray(P, dtype=float)
    n = P.shape[0]
    out = []
    for source in range(n):
        for target in range(n):
            if target != source and P[target, source] > tol:
                out.append((JumpMatrix(source, target, n), float(P[target, source])))
    return out


def propagate_path(P, p0, t0, t1, dt=1e-3):
    """Integrate ``p' = P(t) p`` with classical RK4 and return ``(times, states)``.

    ``P`` is either a constant generator or a callable ``t -> generator``.
    """
    if not dt > 0:
        raise InvalidStep(f"step must be positive, got {dt}")
    grid = step_grid(t0, t1, dt)
    p0 = np.asarray(p0, dtype=float)
    if callable(P):
        def rhs(t, p):
            return check_generator(P(t)) @ p
    else:
        Pc = check_generator(P)
        if Pc.shape[0] != p0.shape[0]:
            raise DimensionMismatch(f"generator dim {Pc.shape[0]} vs vector dim {p0.shape[0]}")

        def rhs(t, p):
            return Pc @ p
    return grid, integrate(rhs, p0, grid)


def propagate(P, p0, t0, t1, dt=1e-3):
    """Probability vector at ``t1`` starting from ``p0`` at ``t0``."""
    _, path = propagate_path(P, p0, t0, t1, dt)
    return check_probability(path[-1])


def kron(Mr, Mn):
    return np.kron(np.asarray(Mr, dtype=float), np.asarray(Mn, dtype=float))


def _merged_rates(jumps, r, n):
    rates = defaultdict(float)
    for G, rate in jumps:
        if G.dim != r * n:
            raise DimensionMismatch(f"jump dim {G.dim} != r*n = {r * n}")
        if rate < 0:
            raise NegativeRate(f"rate {rate} for jump {G.source} -> {G.target}")
        if rate > 0:
            rates[(G.source, G.target)] += rate
    return rates


def classify_coupling(jumps, r, n):
    """Coupling level of a chain on the r x n product space given its jumps."""
    rates = _merged_rates(jumps, r, n)
    z_moves = defaultdict(dict)  # (zs, zt) -> {x: rate}
    x_moves = defaultdict(dict)  # (xs, xt) -> {z: rate}
    for (s, t), rate in rates.items():
        zs, xs = divmod(s, n)
        zt, xt = divmod(t, n)
        if zs != zt and xs != xt:
            return CouplingClass.NON_DECOMPOSABLE
        if zs != zt:
            z_moves[(zs, zt)][xs] = rate
        else:
            x_moves[(xs, xt)][zs] = rate

    def uniform(moves, count):
        for by_state in moves.values():
            vals = [by_state.get(k, 0.0) for k in range(count)]
            if max(vals) - min(vals) > GENERATOR_TOL * max(1.0, max(vals)):
                return False
        return True

    if not uniform(z_moves, n):
        return CouplingClass.DECOMPOSABLE
    if not uniform(x_moves, r):
        return CouplingClass.CASCADE
    return CouplingClass.UNCOUPLED


def diagonal_parts(Pjoint, r, n, tol=1e-9):
    """Least-squares split ``Pjoint ~ I_r (x) A + C (x) I_n``.

    Off-diagonal rates of A (resp. C) are the averages of the matching joint
    entries across z (resp. x).  The diagonal is fit as an additive two-way
    table ``A[x, x] + C[z, z]``; its one-parameter gauge is fixed so that the
    column sums of C add to zero, leaving every column-sum deficit in A.

    Returns ``(A, C)`` when the max-abs residual is within ``tol``, else None.
    """
    P = np.asarray(Pjoint, dtype=float)
    if P.shape != (r * n, r * n):
        raise DimensionMismatch(f"joint generator shape {P.shape} != ({r * n}, {r * n})")
    blocks = P.reshape(r, n, r, n)  # [z', x', z, x]
    zi = np.arange(r)
    xi = np.arange(n)
    diag_blocks = blocks[zi, :, zi, :]  # [z, x', x]
    A = diag_blocks.mean(axis=0)
    same_x = blocks[:, xi, :, xi]  # [x, z', z]
    C = same_x.mean(axis=0)

    D = np.einsum("zxzx->zx", blocks)  # joint diagonal, [z, x]
    c_diag = D.mean(axis=1) - D.mean()
    a_diag = D.mean(axis=0)
    np.fill_diagonal(C, 0.0)
    gamma = -(c_diag.sum() + C.sum()) / r
    np.fill_diagonal(C, c_diag + gamma)
    np.fill_diagonal(A, a_diag - gamma)

    resid = np.max(np.abs(P - kron(np.eye(r), A) - kron(C, np.eye(n)))) if P.size else 0.0
    if resid > tol:
        return None
    return A, C


def marginals(pjoint, r, n):
    """Marginal distributions ``(p_z, p_x)`` of a joint vector on r x n states."""
    p = np.asarray(pjoint, dtype=float)
    if p.shape != (r * n,):
        raise DimensionMismatch(f"joint vector length {p.shape} != {r * n}")
    table = p.reshape(r, n)
    return check_probability(table.sum(axis=1)), check_probability(table.sum(axis=0))
