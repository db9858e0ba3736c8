"""Solver parameters."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Optional


@dataclass(frozen=True)
class SolverOptions:
    k_max: int = 500
    tol_primal: float = 1e-4
    tol_dual: float = 1e-4
    tol_max: float = 1e-2
    s0: float = 1e-1
    z0: Optional[float] = None  # defaults to s0
    s_final: float = 1e-4
    z_final: float = 1e-4
    kappa_st: float = 0.2
    kappa_zt: float = 0.2
    kappa_se: float = 1.5
    kappa_ze: float = 1.5
    nu_J: float = 1e-7
    nu_G: float = 1e-7
    rho: float = 0.1
    alpha_min: float = 0.01
    nu_alpha: float = 0.7
    nu_D: float = 1e-4
    nu_sc: float = 1e-6
    nu_M: float = 0.9
    lambda_max: float = 1000.0
    j_max: int = 20
    soc_enabled: bool = True
    beta0: float = 1.0
    update_perturbation: bool = True  # frozen inside restoration
    restoration_enabled: bool = True
    # shift the Hessian block when the KKT matrix has the wrong inertia
    inertia_correction: bool = True
    delta_init: float = 1e-4
    delta_min: float = 1e-20
    delta_max: float = 1e10

    def __post_init__(self):
        if self.z0 is None:
            object.__setattr__(self, "z0", self.s0)
        errs = []
        for name in ("tol_primal", "tol_dual", "tol_max", "z_final", "rho", "alpha_min",
                     "nu_alpha", "nu_D", "nu_sc", "nu_M", "lambda_max", "beta0",
                     "delta_init", "delta_min", "delta_max"):
            if not getattr(self, name) > 0:
                errs.append(f"{name} must be > 0")
        for name in ("kappa_st", "kappa_zt", "nu_alpha", "rho", "nu_M"):
            if not 0 < getattr(self, name) < 1:
                errs.append(f"{name} must lie in (0, 1)")
        for name in ("kappa_se", "kappa_ze"):
            if not getattr(self, name) > 1:
                errs.append(f"{name} must be > 1")
        if not self.alpha_min <= 1:
            errs.append("alpha_min must be <= 1")
        if not self.s0 >= self.s_final >= 0:
            errs.append("need s0 >= s_final >= 0")
        if not self.z0 >= self.z_final:
            errs.append("need z0 >= z_final")
        if self.nu_J < 0 or self.nu_G < 0:
            errs.append("regularization nu_J, nu_G must be >= 0")
        if self.k_max < 0 or self.j_max < 0:
            errs.append("k_max and j_max must be >= 0")
        if errs:
            raise ValueError("; ".join(errs))

    def with_(self, **kw) -> "SolverOptions":
        return replace(self, **kw)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]
