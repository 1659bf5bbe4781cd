from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dynamics import PatientState
from ..objective import ObjectiveValue
from ..regimens import Regimen, regimen_from_dict, regimen_to_dict

METHODS = ("constant", "piecewise", "optimal", "approximation")


@dataclass
class OptimizationResult:
    method: str
    regimen: Regimen
    objective: ObjectiveValue
    final_state: PatientState
    G: tuple = ()
    diagnostics: dict = field(default_factory=dict)
    trajectory: object = field(default=None, repr=False)

    @property
    def J(self) -> float:
        return self.objective.total

    def to_dict(self) -> dict:
        fs = self.final_state
        return {
            "method": self.method,
            "G": [float(g) for g in self.G],
            "regimen": regimen_to_dict(self.regimen),
            "objective": self.objective.to_dict(),
            "final_state": {"M": fs.M, "T_C": fs.T_C, "N": fs.N, "T_R": fs.T_R},
            "diagnostics": _jsonable(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizationResult":
        fs = d["final_state"]
        return cls(
            method=d["method"],
            regimen=regimen_from_dict(d["regimen"]),
            objective=ObjectiveValue.from_dict(d["objective"]),
            final_state=PatientState(fs["M"], fs["T_C"], fs["N"], fs["T_R"]),
            G=tuple(d.get("G", ())),
            diagnostics=d.get("diagnostics", {}),
        )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
