"""Multiple-myeloma / immune dynamics under pomalidomide, dexamethasone and elotuzumab.

State ordering everywhere is ``(M, T_C, N, T_R)``; dose ordering is
``(u1, u2, u3) = (pomalidomide, dexamethasone, elotuzumab)``.

The numerical kernels (``rhs_kernel``, ``jac_x_kernel``, ``jac_u_kernel``)
work on flat float64 arrays so that they can be called from compiled
integrators.  The dataclasses below are the user-facing types.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np
from numba import njit

STATE_NAMES = ("M", "T_C", "N", "T_R")
DRUG_NAMES = ("pomalidomide", "dexamethasone", "elotuzumab")

# Flat parameter-vector layout used by the kernels.
PARAM_NAMES = (
    "s_M", "r_M", "K_M", "delta_M",
    "a_NM", "b_NM", "a_CM", "b_CM", "a_CNM", "a_MM", "b_MM", "a_RM", "b_RM",
    "r_C", "K_C", "delta_C",
    "a_MC", "b_MC", "a_NC", "b_NC",
    "s_N", "r_N", "K_N", "delta_N",
    "a_CN", "b_CN",
    "r_R", "K_R", "delta_R",
    "a_MR", "b_MR",
)
(S_M, R_M, K_M, D_M, A_NM, B_NM, A_CM, B_CM, A_CNM, A_MM, B_MM, A_RM, B_RM,
 R_C, K_C, D_C, A_MC, B_MC, A_NC, B_NC, S_N, R_N, K_N, D_N, A_CN, B_CN,
 R_R, K_R, D_R, A_MR, B_MR) = range(len(PARAM_NAMES))

# Denominators b + x; a zero threshold paired with a zero population is degenerate.
_THRESHOLDS = {
    "b_NM": 2, "b_CM": 1, "b_MM": 0, "b_RM": 3,
    "b_MC": 0, "b_NC": 2, "b_CN": 1, "b_MR": 0,
}


class ValidationError(ValueError):
    """Raised when parameters, states or doses violate the model's constraints."""


@dataclass(frozen=True)
class PatientState:
    """Population levels: M in g/dL, T_C, N and T_R in cells/uL."""

    M: float
    T_C: float
    N: float
    T_R: float

    def as_array(self) -> np.ndarray:
        return np.array([self.M, self.T_C, self.N, self.T_R], dtype=float)

    @classmethod
    def from_array(cls, x: Sequence[float]) -> "PatientState":
        return cls(*(float(v) for v in x[:4]))

    def validate(self) -> "PatientState":
        x = self.as_array()
        if not np.all(np.isfinite(x)):
            raise ValidationError(f"non-finite state {self}")
        if np.any(x < 0):
            raise ValidationError(f"negative population in {self}")
        return self


@dataclass(frozen=True)
class ModelParameters:
    """Rate and threshold constants of the untreated model plus initial conditions.

    Defaults are the nominal values of the source model's parameter table.
    """

    s_M: float = 0.001
    r_M: float = 0.0175
    K_M: float = 10.0
    delta_M: float = 0.002
    a_NM: float = 5.0
    b_NM: float = 150.0
    a_CM: float = 5.0
    b_CM: float = 375.0
    a_CNM: float = 8.0
    a_MM: float = 0.5
    b_MM: float = 3.0
    a_RM: float = 0.5
    b_RM: float = 25.0
    r_C: float = 0.013
    K_C: float = 800.0
    delta_C: float = 0.02
    a_MC: float = 5.0
    b_MC: float = 3.0
    a_NC: float = 1.0
    b_NC: float = 150.0
    s_N: float = 0.03
    r_N: float = 0.04
    K_N: float = 450.0
    delta_N: float = 0.025
    a_CN: float = 1.0
    b_CN: float = 375.0
    r_R: float = 0.0831
    K_R: float = 80.0
    delta_R: float = 0.0757
    a_MR: float = 2.0
    b_MR: float = 3.0
    # initial conditions
    M0: float = 4.0
    T_C0: float = 464.0
    N0: float = 227.0
    T_R0: float = 42.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise ValidationError(f"parameter {f.name} is not finite ({v})")
            if v < 0:
                raise ValidationError(f"parameter {f.name} must be non-negative, got {v}")
        for name in ("K_M", "K_C", "K_N", "K_R"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"carrying capacity {name} must be strictly positive")
        if self.a_MM + self.a_RM > 1:
            raise ValidationError(
                f"constraint a_MM + a_RM <= 1 violated: a_MM={self.a_MM}, a_RM={self.a_RM}, "
                f"sum={self.a_MM + self.a_RM}"
            )

    @property
    def initial_state(self) -> PatientState:
        return PatientState(self.M0, self.T_C0, self.N0, self.T_R0)

    def with_initial_state(self, x0: PatientState | Sequence[float]) -> "ModelParameters":
        if not isinstance(x0, PatientState):
            x0 = PatientState.from_array(x0)
        return replace(self, M0=x0.M, T_C0=x0.T_C, N0=x0.N, T_R0=x0.T_R)

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)


def _default_phi():
    return (0.5,) * 14


def _default_psi():
    return (40.986,) * 9 + (0.7065,) * 4 + (19.0,)


@dataclass(frozen=True)
class PharmacodynamicsParameters:
    """Emax efficacies ``phi[0..13]`` (phi_1..phi_14), EC50s ``psi`` in ng/mL,
    and maximum average concentrations ``u_max`` in ng/mL.

    phi_1..phi_9 belong to pomalidomide, phi_10..phi_13 to dexamethasone and
    phi_14 to elotuzumab.
    """

    phi: tuple = field(default_factory=_default_phi)
    psi: tuple = field(default_factory=_default_psi)
    u_max: tuple = (204.93, 3.5325, 95.0)

    def __post_init__(self):
        object.__setattr__(self, "phi", tuple(float(v) for v in self.phi))
        object.__setattr__(self, "psi", tuple(float(v) for v in self.psi))
        object.__setattr__(self, "u_max", tuple(float(v) for v in self.u_max))
        self.validate()

    def validate(self) -> None:
        if len(self.phi) != 14 or len(self.psi) != 14:
            raise ValidationError("phi and psi must each have 14 entries")
        if len(self.u_max) != 3:
            raise ValidationError("u_max must have 3 entries")
        for i, v in enumerate(self.phi, 1):
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"efficacy phi_{i}={v} outside [0, 1]")
        for i, v in enumerate(self.psi, 1):
            if not v > 0:
                raise ValidationError(f"half-effect level psi_{i}={v} must be positive")
        for i, v in enumerate(self.u_max, 1):
            if not v > 0:
                raise ValidationError(f"u{i}_max={v} must be positive")

    @property
    def phi_array(self) -> np.ndarray:
        return np.asarray(self.phi, dtype=float)

    @property
    def psi_array(self) -> np.ndarray:
        return np.asarray(self.psi, dtype=float)

    @property
    def u_max_array(self) -> np.ndarray:
        return np.asarray(self.u_max, dtype=float)

    def scaled(self, drug: int, lam: float) -> "PharmacodynamicsParameters":
        """Rescale every EC50 of ``drug`` (0-based) and its bound by ``lam``."""
        psi = list(self.psi)
        for j in _DRUG_PSI[drug]:
            psi[j] *= lam
        u_max = list(self.u_max)
        u_max[drug] *= lam
        return replace(self, psi=tuple(psi), u_max=tuple(u_max))


# 0-based indices into phi/psi acting on each drug.
_DRUG_PSI = (tuple(range(0, 9)), tuple(range(9, 13)), (13,))


def validate_dose(u: Sequence[float], q: PharmacodynamicsParameters, slack: float = 1e-12) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if u.shape != (3,):
        raise ValidationError(f"dose vector must have 3 components, got shape {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValidationError(f"non-finite dose {u}")
    umax = q.u_max_array
    if np.any(u < 0) or np.any(u > umax * (1 + slack)):
        raise ValidationError(f"dose {u.tolist()} outside [0, u_max={list(q.u_max)}]")
    return u


def emax(u: float, phi: float, psi: float) -> float:
    """Saturating drug effect ``phi * u / (psi + u)``."""
    if psi <= 0:
        raise ValidationError(f"half-effect level must be positive, got {psi}")
    if u < 0:
        raise ValidationError(f"concentration must be non-negative, got {u}")
    return phi * u / (psi + u)


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _effects(u, phi, psi, e, de):
    """Fill ``e[i]`` with the Emax effect of term i+1 and ``de[i]`` with its
    derivative with respect to the acting drug's concentration."""
    for i in range(14):
        if i < 9:
            v = u[0]
        elif i < 13:
            v = u[1]
        else:
            v = u[2]
        d = psi[i] + v
        e[i] = phi[i] * v / d
        de[i] = phi[i] * psi[i] / (d * d)


@njit(cache=True)
def rhs_kernel(x, u, p, phi, psi, out):
    """Controlled right-hand side; writes dx/dt for the first four entries of ``x``."""
    M = x[0]
    C = x[1]
    N = x[2]
    R = x[3]
    u1 = u[0]
    u2 = u[1]
    u3 = u[2]
    e1 = phi[0] * u1 / (psi[0] + u1)
    e2 = phi[1] * u1 / (psi[1] + u1)
    e3 = phi[2] * u1 / (psi[2] + u1)
    e4 = phi[3] * u1 / (psi[3] + u1)
    e5 = phi[4] * u1 / (psi[4] + u1)
    e6 = phi[5] * u1 / (psi[5] + u1)
    e7 = phi[6] * u1 / (psi[6] + u1)
    e8 = phi[7] * u1 / (psi[7] + u1)
    e9 = phi[8] * u1 / (psi[8] + u1)
    e10 = phi[9] * u2 / (psi[9] + u2)
    e11 = phi[10] * u2 / (psi[10] + u2)
    e12 = phi[11] * u2 / (psi[11] + u2)
    e13 = phi[12] * u2 / (psi[12] + u2)
    e14 = phi[13] * u3 / (psi[13] + u3)

    nf = N / (p[B_NM] + N)
    cf = C / (p[B_CM] + C)
    mm = p[A_MM] * M / (p[B_MM] + M)
    rm = p[A_RM] * R / (p[B_RM] + R)
    inh_n = 1.0 - mm * (1.0 - e7) - rm
    inh_c = 1.0 - mm * (1.0 - e8) - rm
    kill = (nf * (p[A_NM] * (1.0 + e6 + e14) + p[A_CNM] * cf * (1.0 + e4)) * inh_n
            + p[A_CM] * cf * inh_c)
    out[0] = (p[S_M] + p[R_M] * (1.0 - M / p[K_M]) * M * (1.0 - e5 - e12)
              - p[D_M] * M * (1.0 + e9) - p[D_M] * M * kill)

    boost_c = 1.0 + e2 - e11 + p[A_MC] * M / (p[B_MC] + M) + p[A_NC] * N / (p[B_NC] + N)
    out[1] = p[R_C] * (1.0 - C / p[K_C]) * C * boost_c - p[D_C] * C

    boost_n = 1.0 + e1 - e10 + p[A_CN] * C / (p[B_CN] + C) * (1.0 + e3)
    out[2] = p[S_N] + p[R_N] * (1.0 - N / p[K_N]) * N * boost_n - p[D_N] * N

    out[3] = (p[R_R] * (1.0 - R / p[K_R]) * R * (1.0 - e13) * (1.0 + p[A_MR] * M / (p[B_MR] + M))
              - p[D_R] * R)


@njit(cache=True)
def rhs_uncontrolled_kernel(x, p, out):
    """Untreated right-hand side.

    The kill term ``(a_NM n + a_CM c + a_CNM n c) * inh`` is evaluated as
    ``n (a_NM + a_CNM c) inh + a_CM c inh`` so that it agrees bit-for-bit
    with ``rhs_kernel`` at zero dose.
    """
    M = x[0]
    C = x[1]
    N = x[2]
    R = x[3]
    nf = N / (p[B_NM] + N)
    cf = C / (p[B_CM] + C)
    mm = p[A_MM] * M / (p[B_MM] + M)
    rm = p[A_RM] * R / (p[B_RM] + R)
    inh = 1.0 - mm - rm
    kill = nf * (p[A_NM] + p[A_CNM] * cf) * inh + p[A_CM] * cf * inh
    out[0] = p[S_M] + p[R_M] * (1.0 - M / p[K_M]) * M - p[D_M] * M - p[D_M] * M * kill
    out[1] = (p[R_C] * (1.0 - C / p[K_C]) * C
              * (1.0 + p[A_MC] * M / (p[B_MC] + M) + p[A_NC] * N / (p[B_NC] + N))
              - p[D_C] * C)
    out[2] = p[S_N] + p[R_N] * (1.0 - N / p[K_N]) * N * (1.0 + p[A_CN] * C / (p[B_CN] + C)) - p[D_N] * N
    out[3] = p[R_R] * (1.0 - R / p[K_R]) * R * (1.0 + p[A_MR] * M / (p[B_MR] + M)) - p[D_R] * R


@njit(cache=True)
def jac_x_kernel(x, u, p, phi, psi, jac):
    """Jacobian of ``rhs_kernel`` with respect to the state, ``jac[i, j] = d f_i / d x_j``."""
    M = x[0]
    C = x[1]
    N = x[2]
    R = x[3]
    e = np.empty(14)
    de = np.empty(14)
    _effects(u, phi, psi, e, de)

    bnm = p[B_NM] + N
    bcm = p[B_CM] + C
    bmm = p[B_MM] + M
    brm = p[B_RM] + R
    nf = N / bnm
    dnf = p[B_NM] / (bnm * bnm)
    cf = C / bcm
    dcf = p[B_CM] / (bcm * bcm)
    mm = M / bmm
    dmm = p[B_MM] / (bmm * bmm)
    rm = R / brm
    drm = p[B_RM] / (brm * brm)

    inh_n = 1.0 - p[A_MM] * mm * (1.0 - e[6]) - p[A_RM] * rm
    inh_c = 1.0 - p[A_MM] * mm * (1.0 - e[7]) - p[A_RM] * rm
    a_term = p[A_NM] * (1.0 + e[5] + e[13])
    b_fac = p[A_CNM] * (1.0 + e[3])
    ab = a_term + b_fac * cf
    kill = nf * ab * inh_n + p[A_CM] * cf * inh_c
    dmM = p[D_M] * M

    dkill_dM = (nf * ab * (-p[A_MM] * (1.0 - e[6]) * dmm)
                + p[A_CM] * cf * (-p[A_MM] * (1.0 - e[7]) * dmm))
    dkill_dC = nf * b_fac * dcf * inh_n + p[A_CM] * dcf * inh_c
    dkill_dN = dnf * ab * inh_n
    dkill_dR = (nf * ab + p[A_CM] * cf) * (-p[A_RM] * drm)

    jac[0, 0] = (p[R_M] * (1.0 - 2.0 * M / p[K_M]) * (1.0 - e[4] - e[11])
                 - p[D_M] * (1.0 + e[8]) - p[D_M] * kill - dmM * dkill_dM)
    jac[0, 1] = -dmM * dkill_dC
    jac[0, 2] = -dmM * dkill_dN
    jac[0, 3] = -dmM * dkill_dR

    bmc = p[B_MC] + M
    bnc = p[B_NC] + N
    boost_c = 1.0 + e[1] - e[10] + p[A_MC] * M / bmc + p[A_NC] * N / bnc
    lc = p[R_C] * (1.0 - C / p[K_C]) * C
    jac[1, 0] = lc * p[A_MC] * p[B_MC] / (bmc * bmc)
    jac[1, 1] = p[R_C] * (1.0 - 2.0 * C / p[K_C]) * boost_c - p[D_C]
    jac[1, 2] = lc * p[A_NC] * p[B_NC] / (bnc * bnc)
    jac[1, 3] = 0.0

    bcn = p[B_CN] + C
    boost_n = 1.0 + e[0] - e[9] + p[A_CN] * C / bcn * (1.0 + e[2])
    ln = p[R_N] * (1.0 - N / p[K_N]) * N
    jac[2, 0] = 0.0
    jac[2, 1] = ln * p[A_CN] * p[B_CN] / (bcn * bcn) * (1.0 + e[2])
    jac[2, 2] = p[R_N] * (1.0 - 2.0 * N / p[K_N]) * boost_n - p[D_N]
    jac[2, 3] = 0.0

    bmr = p[B_MR] + M
    boost_r = 1.0 + p[A_MR] * M / bmr
    lr = p[R_R] * (1.0 - R / p[K_R]) * R * (1.0 - e[12])
    jac[3, 0] = lr * p[A_MR] * p[B_MR] / (bmr * bmr)
    jac[3, 1] = 0.0
    jac[3, 2] = 0.0
    jac[3, 3] = p[R_R] * (1.0 - 2.0 * R / p[K_R]) * (1.0 - e[12]) * boost_r - p[D_R]


@njit(cache=True)
def jac_u_kernel(x, u, p, phi, psi, jac):
    """Jacobian of ``rhs_kernel`` with respect to the doses, shape (4, 3)."""
    M = x[0]
    C = x[1]
    N = x[2]
    R = x[3]
    e = np.empty(14)
    de = np.empty(14)
    _effects(u, phi, psi, e, de)

    nf = N / (p[B_NM] + N)
    cf = C / (p[B_CM] + C)
    mm = p[A_MM] * M / (p[B_MM] + M)
    rm = p[A_RM] * R / (p[B_RM] + R)
    inh_n = 1.0 - mm * (1.0 - e[6]) - rm
    ab = p[A_NM] * (1.0 + e[5] + e[13]) + p[A_CNM] * cf * (1.0 + e[3])
    dmM = p[D_M] * M
    lm = p[R_M] * (1.0 - M / p[K_M]) * M

    dkill_du1 = (nf * (p[A_NM] * de[5] + p[A_CNM] * cf * de[3]) * inh_n
                 + nf * ab * mm * de[6]
                 + p[A_CM] * cf * mm * de[7])
    jac[0, 0] = -lm * de[4] - dmM * de[8] - dmM * dkill_du1
    jac[0, 1] = -lm * de[11]
    jac[0, 2] = -dmM * nf * p[A_NM] * de[13] * inh_n

    lc = p[R_C] * (1.0 - C / p[K_C]) * C
    jac[1, 0] = lc * de[1]
    jac[1, 1] = -lc * de[10]
    jac[1, 2] = 0.0

    ln = p[R_N] * (1.0 - N / p[K_N]) * N
    cn = C / (p[B_CN] + C)
    jac[2, 0] = ln * (de[0] + p[A_CN] * cn * de[2])
    jac[2, 1] = -ln * de[9]
    jac[2, 2] = 0.0

    lr = p[R_R] * (1.0 - R / p[K_R]) * R * (1.0 + p[A_MR] * M / (p[B_MR] + M))
    jac[3, 0] = 0.0
    jac[3, 1] = -lr * de[12]
    jac[3, 2] = 0.0


# ---------------------------------------------------------------------------
# user-facing wrappers
# ---------------------------------------------------------------------------

def _state_array(x) -> np.ndarray:
    arr = x.as_array() if isinstance(x, PatientState) else np.asarray(x, dtype=float)
    if arr.shape != (4,):
        raise ValidationError(f"state must have 4 components, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"non-finite state {arr}")
    if np.any(arr < 0):
        raise ValidationError(f"state must be non-negative, got {arr}")
    return arr


def _check_degenerate(x: np.ndarray, p: ModelParameters) -> None:
    for name, idx in _THRESHOLDS.items():
        if getattr(p, name) == 0 and x[idx] == 0:
            raise ValidationError(f"degenerate input: {name} = 0 with {STATE_NAMES[idx]} = 0")


def rhs_uncontrolled(x, p: ModelParameters) -> np.ndarray:
    """Rates ``(dM/dt, dT_C/dt, dN/dt, dT_R/dt)`` without treatment."""
    arr = _state_array(x)
    _check_degenerate(arr, p)
    out = np.empty(4)
    rhs_uncontrolled_kernel(arr, p.as_array(), out)
    return out


def rhs_controlled(x, u, p: ModelParameters, q: PharmacodynamicsParameters) -> np.ndarray:
    """Rates under constant drug levels ``u`` (ng/mL)."""
    arr = _state_array(x)
    _check_degenerate(arr, p)
    uu = validate_dose(u, q)
    out = np.empty(4)
    rhs_kernel(arr, uu, p.as_array(), q.phi_array, q.psi_array, out)
    return out


def jacobian_state(x, u, p: ModelParameters, q: PharmacodynamicsParameters) -> np.ndarray:
    jac = np.empty((4, 4))
    jac_x_kernel(_state_array(x), np.asarray(u, dtype=float), p.as_array(), q.phi_array, q.psi_array, jac)
    return jac


def jacobian_dose(x, u, p: ModelParameters, q: PharmacodynamicsParameters) -> np.ndarray:
    jac = np.empty((4, 3))
    jac_u_kernel(_state_array(x), np.asarray(u, dtype=float), p.as_array(), q.phi_array, q.psi_array, jac)
    return jac
