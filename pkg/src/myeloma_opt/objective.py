"""Objective weights and evaluation of

    J = alpha M(T) + int_0^T (beta M + gamma_1 u1 + gamma_2 u2 + gamma_3 u3) dt
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Literal day count in the weight denominators, kept independent of the horizon.
WEIGHT_DAYS = 360.0


@dataclass(frozen=True)
class ObjectiveWeights:
    alpha: float
    beta: float
    gamma: tuple
    G: tuple = (np.nan, np.nan, np.nan)
    horizon: float = 360.0

    def __post_init__(self):
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        object.__setattr__(self, "G", tuple(float(g) for g in self.G))
        if len(self.gamma) != 3:
            raise ValueError("gamma must have three entries")
        if self.alpha < 0 or self.beta < 0 or any(g < 0 for g in self.gamma):
            raise ValueError(f"objective weights must be non-negative: {self}")
        if not self.horizon >= 0:
            raise ValueError("horizon must be non-negative")


def build_weights(G: Sequence[float], M_init: float, u_max: Sequence[float], horizon: float = 360.0,
                  tie_to_horizon: bool = False) -> ObjectiveWeights:
    """alpha = M_init, beta = alpha/360, gamma_i = G_i / (360 u_i^max).

    With ``tie_to_horizon`` the 360 is replaced by ``horizon``.
    """
    G = tuple(float(g) for g in G)
    if len(G) != 3 or len(u_max) != 3:
        raise ValueError("G and u_max need three entries each")
    if any(m <= 0 for m in u_max):
        raise ValueError(f"u_max entries must be positive, got {tuple(u_max)}")
    if M_init < 0 or any(g < 0 for g in G):
        raise ValueError("M_init and G must be non-negative")
    days = float(horizon) if tie_to_horizon else WEIGHT_DAYS
    alpha = float(M_init)
    return ObjectiveWeights(
        alpha=alpha,
        beta=alpha / days,
        gamma=tuple(g / (days * m) for g, m in zip(G, u_max)),
        G=G,
        horizon=float(horizon),
    )


@dataclass(frozen=True)
class ObjectiveValue:
    total: float
    terminal: float
    burden: float
    toxicity: tuple

    def to_dict(self) -> dict:
        return {"J": self.total, "terminal": self.terminal, "burden_integral": self.burden,
                "toxicity_integrals": list(self.toxicity)}

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectiveValue":
        return cls(d["J"], d["terminal"], d["burden_integral"], tuple(d["toxicity_integrals"]))


def objective_from_terminal(y, w: ObjectiveWeights) -> ObjectiveValue:
    """Objective from the augmented terminal state
    ``(M, T_C, N, T_R, int M, int u1, int u2, int u3)``."""
    terminal = w.alpha * y[0]
    burden = w.beta * y[4]
    tox = (w.gamma[0] * y[5], w.gamma[1] * y[6], w.gamma[2] * y[7])
    total = terminal + burden + tox[0] + tox[1] + tox[2]
    return ObjectiveValue(float(total), float(terminal), float(burden), tuple(float(t) for t in tox))


def objective_totals(Y: np.ndarray, w: ObjectiveWeights) -> np.ndarray:
    """Vectorised total J for rows of augmented terminal states; same arithmetic
    (and hence bit-identical results) as :func:`objective_from_terminal`."""
    return (w.alpha * Y[..., 0] + w.beta * Y[..., 4]
            + w.gamma[0] * Y[..., 5] + w.gamma[1] * Y[..., 6] + w.gamma[2] * Y[..., 7])


def evaluate(traj, w: ObjectiveWeights, horizon_tol: float = 1e-9) -> ObjectiveValue:
    """J for a simulated trajectory spanning ``[0, w.horizon]``."""
    if traj.times[0] != 0 or abs(traj.horizon - w.horizon) > horizon_tol * max(1.0, w.horizon):
        raise ValueError(f"trajectory spans [{traj.times[0]}, {traj.horizon}] but weights expect "
                         f"[0, {w.horizon}]")
    return objective_from_terminal(traj.terminal_augmented, w)
