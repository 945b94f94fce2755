"""Running/terminal cost specification shared by the solvers and the simulator."""

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import DimensionMismatch

PSI_KINDS = ("zero", "quadratic")


@dataclass(frozen=True, eq=False)
class CostSpec:
    """Expected cost ``E[int_0^T (z' L' x + psi(u)) dt + z(T)' Phi' x(T)]``.

    Parameters
    ----------
    L : (n, r) array or callable
        Running cost; ``L[x, z]`` is the rate accrued in state (z, x).  A
        callable is evaluated as ``L(t)``.
    Phi : (n, r) array
        Terminal cost.
    psi : {"zero", "quadratic"} or callable
        Control cost; "quadratic" is ``sum(u**2)``.  A callable maps a control
        vector to a real number.
    alpha : float
        Discount rate, multiplying running and terminal costs by ``exp(-alpha t)``.
    """

    L: Union[np.ndarray, Callable]
    Phi: np.ndarray
    psi: Union[str, Callable] = "zero"
    alpha: float = 0.0

    def __post_init__(self):
        Phi = np.array(self.Phi, dtype=float)
        if Phi.ndim != 2:
            raise DimensionMismatch(f"Phi must be an (n, r) matrix, got {Phi.shape}")
        object.__setattr__(self, "Phi", Phi)
        if not callable(self.L):
            L = np.array(self.L, dtype=float)
            if L.shape != Phi.shape:
                raise DimensionMismatch(f"L shape {L.shape} differs from Phi shape {Phi.shape}")
            object.__setattr__(self, "L", L)
        if isinstance(self.psi, str) and self.psi not in PSI_KINDS:
            raise ValueError(f"unknown psi kind {self.psi!r}")
        if self.alpha < 0 or not math.isfinite(self.alpha):
            raise ValueError(f"discount must be finite and >= 0, got {self.alpha}")

    @classmethod
    def zero(cls, n, r, **kw):
        return cls(np.zeros((n, r)), np.zeros((n, r)), **kw)

    @property
    def shape(self):
        return self.Phi.shape

    @property
    def time_invariant(self):
        return not callable(self.L)

    @property
    def psi_kind(self):
        return self.psi if isinstance(self.psi, str) else "custom"

    def running(self, t):
        """Discounted running-cost matrix at time t."""
        L = np.asarray(self.L(t), dtype=float) if callable(self.L) else self.L
        return L * math.exp(-self.alpha * t) if self.alpha else L

    def terminal(self, T):
        return self.Phi * math.exp(-self.alpha * T) if self.alpha else self.Phi

    def psi_value(self, u):
        u = np.asarray(u, dtype=float)
        if self.psi == "zero":
            return 0.0
        if self.psi == "quadratic":
            return float(np.dot(u, u))
        return float(self.psi(u))


@dataclass(frozen=True)
class ShiftedQuadratic:
    """Picklable custom control cost ``weight * sum((u - center)**2)``."""

    weight: float = 1.0
    center: tuple = ()

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        c = np.asarray(self.center, dtype=float) if self.center else 0.0
        return float(self.weight * np.sum((u - c) ** 2))
