"""
Exact sample paths of a controlled cascade by thinning, Monte Carlo estimates
of the expected cost, and portfolio accounting along simulated paths.
"""

import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyInput, RateBoundOverflow
from .model import ConstantPolicy, TabulatedPolicy, controlled_part

QUAD_INTERVALS = 64


@dataclass(frozen=True)
class Event:
    time: float
    chain: str  # "Z" or "X"
    source: int
    target: int
    u: tuple


@dataclass(eq=False)
class SamplePath:
    seed: int
    index: int
    z0: int
    x0: int
    T: float
    r: int
    n: int
    events: list = field(default_factory=list)

    def states(self):
        """Times and (z, x) after each event, starting with the initial state."""
        times = [0.0]
        zs, xs = [self.z0], [self.x0]
        z, x = self.z0, self.x0
        for e in self.events:
            if e.chain == "Z":
                z = e.target
            else:
                x = e.target
            times.append(e.time)
            zs.append(z)
            xs.append(x)
        return np.array(times), np.array(zs), np.array(xs)

    def state_at(self, t):
        times, zs, xs = self.states()
        i = int(np.searchsorted(times, t, side="right")) - 1
        return int(zs[i]), int(xs[i])

    def to_text(self):
        buf = io.StringIO()
        buf.write("seed,index,z0,x0,T,r,n\n")
        buf.write(f"{self.seed},{self.index},{self.z0},{self.x0},{self.T:.17g},{self.r},{self.n}\n")
        p = len(self.events[0].u) if self.events else 0
        buf.write(",".join(["time", "chain", "from", "to"] + [f"u{j + 1}" for j in range(p)]) + "\n")
        for e in self.events:
            row = [f"{e.time:.17g}", e.chain, str(e.source), str(e.target)] + [f"{v:.17g}" for v in e.u]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text):
        lines = text.strip().splitlines()
        seed, index, z0, x0, T, r, n = lines[1].split(",")
        path = cls(int(seed), int(index), int(z0), int(x0), float(T), int(r), int(n))
        for line in lines[3:]:
            parts = line.split(",")
            path.events.append(Event(float(parts[0]), parts[1], int(parts[2]), int(parts[3]),
                                     tuple(float(v) for v in parts[4:])))
        return path


def path_rng(seed, index=0):
    """Counter-based stream for path ``index`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def rate_bound(model):
    """Upper bound on the total exit rate over all states and box vertices."""
    if model.r == 0 or model.n == 0:
        return 0.0
    z_exit = -np.diag(model.C)
    best = 0.0
    for z in range(model.r):
        x_exit = max(float(np.max(-np.diag(model.A0 + controlled_part(model, z, v)))) for v in model.vertices())
        best = max(best, float(z_exit[z]) + max(x_exit, 0.0))
    if not math.isfinite(best):
        raise RateBoundOverflow(f"rate bound is not finite: {best}")
    return best


class _Rates:
    """Column-wise access to controlled rates without assembling full generators."""

    def __init__(self, model):
        self.model = model
        self.base = model.A0[None] + model.A  # (r, n, n)
        self.B = model.B

    def column(self, z, x, u):
        col = self.base[z, :, x].copy()
        if self.model.p:
            col += self.B[:, z, :, x].T @ u
        return col


def simulate(model, policy, z0, x0, T, seed, index=0):
    """One exact sample path on ``[0, T]`` by thinning.

    Candidate events arrive at the constant rate bound; a candidate at time t
    is accepted with probability (current total rate)/bound, with the policy
    evaluated at t.  An accepted event moves z or x in proportion to their
    current exit rates.
    """
    if not 0 <= z0 < model.r or not 0 <= x0 < model.n:
        raise DimensionMismatch(f"initial state ({z0}, {x0}) outside ({model.r}, {model.n})")
    rng = path_rng(seed, index)
    path = SamplePath(int(seed), int(index), int(z0), int(x0), float(T), model.r, model.n)
    lam = rate_bound(model)
    if lam <= 0:
        return path
    rates = _Rates(model)
    C = model.C
    z, x, t = int(z0), int(x0), 0.0
    while True:
        t += rng.exponential(1.0 / lam)
        if t > T:
            break
        u = policy(t, z, x, model)
        rz = -C[z, z]
        col = rates.column(z, x, u)
        rx = -col[x]
        w = rng.random() * lam
        if w < rz:
            probs = C[:, z].copy()
            probs[z] = 0.0
            target = int(rng.choice(model.r, p=probs / rz))
            path.events.append(Event(t, "Z", z, target, tuple(float(v) for v in u)))
            z = target
        elif w < rz + rx:
            probs = np.clip(col, 0.0, None)
            probs[x] = 0.0
            target = int(rng.choice(model.n, p=probs / probs.sum()))
            path.events.append(Event(t, "X", x, target, tuple(float(v) for v in u)))
            x = target
    return path


def simulate_many(model, policy, z0, x0, T, n_paths, seed):
    return [simulate(model, policy, z0, x0, T, seed, i) for i in range(n_paths)]


# -- cost functional -------------------------------------------------------------

def _discount_integral(a, b, alpha):
    if alpha == 0.0:
        return b - a
    return (math.exp(-alpha * a) - math.exp(-alpha * b)) / alpha


def _simpson(f, a, b, m=QUAD_INTERVALS):
    if b <= a:
        return 0.0
    ts = np.linspace(a, b, 2 * m + 1)
    vals = np.array([f(t) for t in ts])
    h = (b - a) / (2 * m)
    return float(h / 3 * (vals[0] + vals[-1] + 4 * vals[1:-1:2].sum() + 2 * vals[2:-1:2].sum()))


class _PsiIntegral:
    """Integral of the control cost along a segment with fixed (z, x)."""

    def __init__(self, model, policy, cost):
        self.model = model
        self.policy = policy
        self.cost = cost
        self.kind = cost.psi_kind
        if self.kind == "zero":
            return
        if isinstance(policy, ConstantPolicy):
            self.rate = cost.psi_value(np.clip(policy.u, model.bounds[:, 0], model.bounds[:, 1]))
        elif isinstance(policy, TabulatedPolicy):
            vals = np.clip(policy.values, model.bounds[:, 0], model.bounds[:, 1])
            m = vals.shape[0]
            psi = np.array([cost.psi_value(u) for u in vals.reshape(-1, model.p)]).reshape(vals.shape[:3])
            widths = np.diff(policy.grid)
            cum = np.zeros_like(psi)
            if m > 1:
                cum[1:] = np.cumsum(psi[:-1] * widths[:, None, None], axis=0)
            self.psi_table, self.cum = psi, cum

    def _F(self, t, z, x):
        pol = self.policy
        i = pol.index(t)
        return self.cum[i, z, x] + self.psi_table[i, z, x] * (t - pol.grid[i])

    def __call__(self, a, b, z, x):
        if self.kind == "zero" or b <= a:
            return 0.0
        if isinstance(self.policy, ConstantPolicy):
            return self.rate * (b - a)
        if isinstance(self.policy, TabulatedPolicy):
            return float(self._F(b, z, x) - self._F(a, z, x))
        return _simpson(lambda t: self.cost.psi_value(self.policy(t, z, x, self.model)), a, b)


def path_cost(path, model, policy, cost, psi_integral=None):
    """Realised cost ``int (z'L'x + psi(u)) dt + z(T)'Phi'x(T)`` of one path."""
    psi_integral = psi_integral or _PsiIntegral(model, policy, cost)
    times, zs, xs = path.states()
    bounds = np.append(times, path.T)
    total = 0.0
    for a, b, z, x in zip(bounds[:-1], bounds[1:], zs, xs):
        if cost.time_invariant:
            total += cost.L[x, z] * _discount_integral(a, b, cost.alpha)
        else:
            total += _simpson(lambda t: cost.running(t)[x, z], a, b)
        total += psi_integral(a, b, z, x)
    return total + float(cost.terminal(path.T)[xs[-1], zs[-1]])


@dataclass
class EtaEstimate:
    mean: float
    stderr: float
    n_paths: int
    values: np.ndarray | None = None

    def within(self, target, k=3.0):
        return abs(self.mean - target) <= k * self.stderr


def path_costs(model, policy, cost, z0, x0, T, seed, start, stop):
    """Realised costs of paths ``start, ..., stop - 1`` of a seeded run."""
    psi_integral = _PsiIntegral(model, policy, cost)
    return np.array([path_cost(simulate(model, policy, z0, x0, T, seed, i), model, policy, cost, psi_integral)
                     for i in range(start, stop)])


def estimate_eta(model, policy, cost, z0, x0, T, n_paths, seed, keep=False, workers=1):
    """Monte Carlo estimate of the expected cost under ``policy``.

    Path i always uses the stream ``(seed, i)``, so the estimate does not
    depend on ``workers``.
    """
    if n_paths < 2:
        raise ValueError("need at least two paths for a standard error")
    args = (model, policy, cost, z0, x0, T, seed)
    if workers > 1:
        edges = np.linspace(0, n_paths, workers + 1).astype(int)
        with ProcessPoolExecutor(workers) as pool:
            parts = pool.map(path_costs, *zip(*[args + (a, b) for a, b in zip(edges[:-1], edges[1:])]))
            values = np.concatenate(list(parts))
    else:
        values = path_costs(*args, 0, n_paths)
    mean = float(np.sum(values) / n_paths)
    stderr = float(np.std(values, ddof=1) / math.sqrt(n_paths))
    return EtaEstimate(mean, stderr, n_paths, values if keep else None)


# -- portfolio accounting ----------------------------------------------------------

@dataclass
class PortfolioSeries:
    """Value ``v``, cumulative investment ``s`` and wealth ``w = v - s`` after each event."""

    times: np.ndarray
    v: np.ndarray
    s: np.ndarray
    w: np.ndarray
    x_jumps: np.ndarray  # value change at each X-event


def portfolio_series(path, V):
    V = np.asarray(V, dtype=float)
    if V.shape != (path.n, path.r):
        raise DimensionMismatch(f"V shape {V.shape} != {(path.n, path.r)}")
    z, x = path.z0, path.x0
    times, v, s, w, jumps = [0.0], [V[x, z]], [0.0], [V[x, z]], []
    for e in path.events:
        if e.chain == "X":
            ds = V[e.target, z] - V[e.source, z]
            x = e.target
            s.append(s[-1] + ds)
            w.append(w[-1])
            jumps.append(ds)
        else:
            dw = V[x, e.target] - V[x, e.source]
            z = e.target
            s.append(s[-1])
            w.append(w[-1] + dw)
        times.append(e.time)
        v.append(V[x, z])
    return PortfolioSeries(np.array(times), np.array(v), np.array(s), np.array(w), np.array(jumps))


def occupancy(paths, t):
    """Empirical joint distribution at time t, flattened with index ``z * n + x``."""
    if not paths:
        raise EmptyInput("no paths")
    r, n = paths[0].r, paths[0].n
    counts = np.zeros(r * n)
    for path in paths:
        if t > path.T:
            raise ValueError(f"t={t} beyond path horizon {path.T}")
        z, x = path.state_at(t)
        counts[z * n + x] += 1
    return counts / len(paths)
