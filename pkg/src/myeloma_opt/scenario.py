"""Everything an optimizer needs to know about one treatment problem."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

from .dynamics import ModelParameters, PatientState, PharmacodynamicsParameters, ValidationError
from .integrator import IntegratorSettings
from .objective import ObjectiveWeights, build_weights
from .regimens import DoseGrid, _n_periods


@dataclass(frozen=True)
class SolverSettings:
    """Projected-gradient settings for the continuous problem.

    ``tol`` bounds the sup-norm of the projected gradient step measured in
    doses normalised by ``u_max`` with the gradient scaled to a density over
    the horizon (see :mod:`myeloma_opt.optimizers.control`).
    """

    max_iter: int = 2000
    tol: float = 1e-6
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    mesh: float = 1.0
    step_min: float = 1e-12
    step_max: float = 1e6
    initial_fraction: float = 0.5

    def __post_init__(self):
        if self.max_iter < 0 or not self.tol > 0 or not self.mesh > 0:
            raise ValueError("solver settings must be positive")
        if not 0 < self.armijo_c1 < 1 or not 0 < self.backtrack < 1:
            raise ValueError("line-search parameters must lie in (0, 1)")


@dataclass(frozen=True)
class Scenario:
    params: ModelParameters = field(default_factory=ModelParameters)
    pd: PharmacodynamicsParameters = field(default_factory=PharmacodynamicsParameters)
    x0: PatientState | None = None
    horizon: float = 360.0
    period: float = 90.0
    grid: DoseGrid = field(default_factory=DoseGrid)
    weights: ObjectiveWeights | None = None
    integrator: IntegratorSettings = field(default_factory=IntegratorSettings)
    solver: SolverSettings = field(default_factory=SolverSettings)
    alpha: float | None = None

    def __post_init__(self):
        if self.x0 is None:
            object.__setattr__(self, "x0", self.params.initial_state)
        elif not isinstance(self.x0, PatientState):
            object.__setattr__(self, "x0", PatientState.from_array(self.x0))
        if any(v <= 0 for v in self.x0.as_array()):
            raise ValidationError(f"initial state must be strictly positive, got {self.x0}")
        if not self.horizon > 0:
            raise ValidationError("horizon must be positive")
        _n_periods(self.period, self.horizon)
        self.grid.validate(self.pd)
        if self.weights is None:
            object.__setattr__(self, "weights", self.weights_for((1.0, 1.0, 1.0)))

    @property
    def n_periods(self) -> int:
        return _n_periods(self.period, self.horizon)

    @property
    def switch_times(self) -> tuple:
        return tuple(self.period * k for k in range(1, self.n_periods))

    def weights_for(self, G: Sequence[float]) -> ObjectiveWeights:
        alpha = self.x0.M if self.alpha is None else self.alpha
        return build_weights(G, alpha, self.pd.u_max, self.horizon)

    def with_G(self, G: Sequence[float]) -> "Scenario":
        return replace(self, weights=self.weights_for(G))

    def with_weights(self, weights: ObjectiveWeights) -> "Scenario":
        return replace(self, weights=weights)
