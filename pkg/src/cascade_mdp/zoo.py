"""
Worked cascade examples: small portfolio models and the binary-choice "cat"
problem, plus driver generators and cost helpers for them.

State labels, in order:

* bond/stock: x in {(0,2), (-1,-1), (0,-2)} bond/stock weights, z in prices
  {(1,1), (1,-1/3)}.
* cat: x in {AteMeat, AteFish, AteMilk, Unfed}, z in offered pairs
  {Fish/Milk, Meat/Milk, Meat/Fish}.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .cost import CostSpec
from .ctmc import check_generator, kron
from .errors import BadKind, DimensionMismatch, NonAdmissibleModel
from .model import CascadeModel, check_admissible, controlled_part

HALF = (-0.5, 0.5)


@dataclass(frozen=True, eq=False)
class ZooEntry:
    name: str
    model: CascadeModel
    V: np.ndarray | None = None
    self_financing: bool = False
    description: str = ""

    def __post_init__(self):
        report = check_admissible(self.model)
        if not report.ok:
            raise NonAdmissibleModel(f"{self.name}: {report.first}")
        if self.V is not None:
            V = np.array(self.V, dtype=float)
            if V.shape != (self.model.n, self.model.r):
                raise DimensionMismatch(f"V shape {V.shape} != {(self.model.n, self.model.r)}")
            object.__setattr__(self, "V", V)
        if self.self_financing:
            bad = value_jumps(self.model, self.V)
            if bad:
                raise NonAdmissibleModel(f"{self.name}: value jumps at {bad[0]}")


def allowed_moves(model, z):
    """Pairs (source, target) with positive rate at some box vertex for driver z."""
    moves = set()
    for v in model.vertices():
        P = model.A0 + controlled_part(model, z, v)
        for target, source in np.argwhere(P > 0):
            if target != source:
                moves.add((int(source), int(target)))
    return sorted(moves)


def value_jumps(model, V):
    """(z, source, target, jump) for every allowed x-move that changes the value."""
    out = []
    for z in range(model.r):
        for s, t in allowed_moves(model, z):
            jump = V[t, z] - V[s, z]
            if jump != 0.0:
                out.append((z, s, t, jump))
    return out


def default_price_generator(r, kind="uniform", rate=0.5):
    """Driver generator for examples whose pricing model is left open.

    ``uniform`` spreads ``rate`` evenly over the other states.  ``biased_up``
    (r = 2) leaves the low state at ``rate`` and the high state at ``rate/2``,
    so the high state is twice as likely in steady state.
    """
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate}")
    if kind == "uniform":
        if r == 1:
            return np.zeros((1, 1))
        C = np.full((r, r), rate / (r - 1))
        np.fill_diagonal(C, -rate)
        return C
    if kind == "biased_up":
        if r != 2:
            raise BadKind("biased_up is defined for two price states only")
        return np.array([[-rate, rate / 2], [rate, -rate / 2]])
    raise BadKind(f"unknown generator kind {kind!r}")


def independent_prices(C1, C2):
    """Generator of two independent price chains, ``C1 (x) I + I (x) C2``."""
    C1 = check_generator(C1)
    C2 = check_generator(C2)
    return kron(C1, np.eye(C2.shape[0])) + kron(np.eye(C1.shape[0]), C2)


def bond_stock_sf(C=None):
    C = default_price_generator(2) if C is None else C
    A = 0.5 * np.array([
        [[0, 0, 0], [0, -1, 1], [0, 1, -1]],
        [[-1, 1, 0], [1, -1, 0], [0, 0, 0]],
    ])
    B = np.array([[
        [[0, 0, 0], [0, -1, -1], [0, 1, 1]],
        [[-1, -1, 0], [1, 1, 0], [0, 0, 0]],
    ]])
    V = np.array([[2, -2 / 3], [-2, -2 / 3], [-2, 2 / 3]])
    model = CascadeModel(C, np.zeros((3, 3)), A, B, [HALF])
    return ZooEntry("bond-stock", model, V, True, "self-financing bond/stock portfolio")


def _cat_matrices(N, f, s):
    n = N + 1
    pairs = sorted(combinations(range(N), 2), reverse=True)
    A0 = np.zeros((n, n))
    for i in range(N):
        A0[i, i] = -s
        A0[N, i] = s
    A = np.zeros((len(pairs), n, n))
    B = np.zeros((1, len(pairs), n, n))
    for z, (i, j) in enumerate(pairs):
        A[z, i, N] = A[z, j, N] = f / 2
        A[z, N, N] = -f
        favored, other = (i, j) if j - i <= N - (j - i) else (j, i)
        B[0, z, favored, N] = f
        B[0, z, other, N] = -f
    return A0, A, B


def binary_decision(N, C=None, f=1.0, s=1.0):
    """Binary-choice model over N outcomes plus an "unfed" state.

    Each driver state offers one unordered pair of outcomes; the control tilts
    the choice within the offered pair.
    """
    if N < 2:
        raise ValueError(f"need at least two outcomes, got {N}")
    if not (f > 0 and s > 0):
        raise ValueError("rates f and s must be positive")
    r = N * (N - 1) // 2
    C = default_price_generator(r, rate=1.0) if C is None else C
    A0, A, B = _cat_matrices(N, f, s)
    model = CascadeModel(C, A0, A, B, [HALF])
    return ZooEntry(f"binary-{N}", model, None, False, f"binary choice among {N} outcomes")


def cats_dilemma(f=1.0, s=1.0, C=None):
    entry = binary_decision(3, C, f, s)
    return ZooEntry("cats-dilemma", entry.model, None, False, "cat choosing between offered food pairs")


def two_stock_sf(C=None):
    C = independent_prices(default_price_generator(2), default_price_generator(2)) if C is None else C
    A_full = 0.5 * np.array([[-1, 1, 0], [1, -2, 1], [0, 1, -1]])
    A_low = 0.5 * np.array([[-1, 1, 0], [1, -1, 0], [0, 0, 0]])
    A_high = 0.5 * np.array([[0, 0, 0], [0, -1, 1], [0, 1, -1]])
    B_full = np.array([[-1, 0, 0], [1, -1, 0], [0, 1, 0]])
    B_low = np.array([[-1, 0, 0], [1, 0, 0], [0, 0, 0]])
    B_high = np.array([[0, 0, 0], [0, -1, 0], [0, 1, 0]])
    D_full = np.array([[0, 1, 0], [0, -1, 1], [0, 0, -1]])
    D_low = np.array([[0, 1, 0], [0, -1, 0], [0, 0, 0]])
    D_high = np.array([[0, 0, 0], [0, 0, 1], [0, 0, -1]])
    A = np.array([A_full, A_low, A_high, A_full])
    # B(e4) follows the printed matrix rather than the full pattern.
    B = np.array([[B_full, B_low, B_high, B_high], [D_full, D_low, D_high, D_full]])
    V = np.array([[-2, 2, 0, 2], [-2, 2, -2, 2], [-2, 0, -2, 2]])
    model = CascadeModel(C, np.zeros((3, 3)), A, B, [HALF, HALF])
    return ZooEntry("two-stock", model, V, True, "self-financing two-stock portfolio")


def invest_consume(C=None):
    C = independent_prices(default_price_generator(2), default_price_generator(2)) if C is None else C
    A1 = np.array([[-0.5, 0.5, 0], [0.5, -1, 0.5], [0, 0.5, -0.5]])
    B1 = np.array([[-1, 0, 0], [1, -1, 0], [0, 1, 0]])
    D1 = np.array([[0, 1, 0], [0, -1, 1], [0, 0, -1]])
    A = np.repeat(A1[None], 4, axis=0)
    B = np.array([np.repeat(B1[None], 4, axis=0), np.repeat(D1[None], 4, axis=0)])
    V = np.array([[-2, 2, -2, 2], [-2, 0, 0, 2], [-2, 2, 2, 2]])
    model = CascadeModel(C, np.zeros((3, 3)), A, B, [HALF, HALF])
    return ZooEntry("invest-consume", model, V, False, "single-stock investment/consumption portfolio")


def random_cascade(r, n=4, p=1, seed=0, rate=1.0):
    """Random admissible cascade used for timing comparisons.

    Each B_j(z) moves mass between two fixed states per column so that
    ``A(z) +/- B_j(z)/2`` stays a generator.
    """
    rng = np.random.default_rng(seed)
    C = rng.uniform(0, rate, (r, r))
    np.fill_diagonal(C, 0.0)
    np.fill_diagonal(C, -C.sum(axis=0))
    A = rng.uniform(0.5 * rate, rate, (r, n, n))
    for z in range(r):
        np.fill_diagonal(A[z], 0.0)
        np.fill_diagonal(A[z], -A[z].sum(axis=0))
    B = np.zeros((p, r, n, n))
    for j in range(p):
        for z in range(r):
            for x in range(n):
                t = (x + 1 + j + z) % n
                w = rng.uniform(0, 0.5 * rate) / max(p, 1)
                B[j, z, t, x] += w
                B[j, z, x, x] -= w
                t2 = (x + 2 + j) % n
                if t2 != x:
                    B[j, z, t2, x] -= w
                    B[j, z, x, x] += w
    model = CascadeModel(C, np.zeros((n, n)), A, B, [HALF] * p)
    return ZooEntry(f"random-{r}x{n}", model, None, False, "random cascade")


def terminal_value_cost(entry):
    """Maximise expected terminal value, as the minimisation of ``-v(T)``."""
    V = entry.V
    return CostSpec(np.zeros_like(V), -V)


def wealth_rate(entry):
    """Matrix ``W`` with expected wealth drift ``z' W' x`` from price moves."""
    return entry.V @ entry.model.C


def max_wealth_cost(entry, alpha=0.0, psi="zero"):
    """Maximise expected wealth gained from price moves over the horizon."""
    W = wealth_rate(entry)
    return CostSpec(-W, np.zeros_like(W), psi=psi, alpha=alpha)


def min_investment_cost(entry, alpha=0.0, psi="zero"):
    """Minimise expected net investment ``s(T) = v(T) - v(0) - w(T)``.

    The running and terminal parts below cover ``v(T) - w(T)``; callers
    subtract ``v(0)`` themselves.
    """
    W = wealth_rate(entry)
    return CostSpec(-W, entry.V.copy(), psi=psi, alpha=alpha)


def bang_bang_cost(entry, target=None):
    """Running cost of one per unit time spent in x = ``target`` (default the first state)."""
    n, r = entry.model.n, entry.model.r
    target = 0 if target is None else target
    L = np.zeros((n, r))
    L[target, :] = 1.0
    return CostSpec(L, np.zeros((n, r)))


ZOO = {
    "bond-stock": bond_stock_sf,
    "cats-dilemma": cats_dilemma,
    "two-stock": two_stock_sf,
    "invest-consume": invest_consume,
}


def preference_cost(entry, weights=None):
    """Running cost ``weights[x]`` per unit time in each outcome; the last state is free.

    The default weights ``0, 1, ..., N-1`` rank the outcomes.
    """
    n, r = entry.model.n, entry.model.r
    w = np.arange(n - 1, dtype=float) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (n - 1,):
        raise DimensionMismatch(f"need {n - 1} outcome weights, got {w.shape}")
    L = np.zeros((n, r))
    L[:-1, :] = w[:, None]
    return CostSpec(L, np.zeros((n, r)))


def default_cost(entry):
    """Cost used when a zoo model is solved without an explicit cost."""
    if entry.V is not None:
        return terminal_value_cost(entry)
    if entry.name.startswith(("binary-", "cats-")):
        return preference_cost(entry)
    return bang_bang_cost(entry)


def get(name, **kw):
    if name.startswith("binary-"):
        return binary_decision(int(name.split("-", 1)[1]), **kw)
    try:
        return ZOO[name](**kw)
    except KeyError:
        raise BadKind(f"unknown zoo model {name!r}; choose from {sorted(ZOO)}") from None
