"""Symmetric, uniformly convex nearest-neighbour potentials V."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConvexityError, ParameterError, ValidationError

# kernel codes understood by the compiled sweep core
KIND_QUADRATIC = 0
KIND_DIPOLE = 1


@dataclass(frozen=True)
class Potential:
    name: str
    params: dict
    V: Callable
    dV: Callable
    d2V: Callable
    c_minus: float
    c_plus: float
    kind: int | None = None
    kernel_params: tuple = field(default=())

    def spec(self) -> dict:
        """Serializable {name, params} record."""
        return {"name": self.name, "params": dict(self.params)}

    @property
    def stiffness_ref(self) -> float:
        return 0.5 * (self.c_minus + self.c_plus)


def quadratic() -> Potential:
    return Potential(
        "quadratic", {},
        V=lambda x: 0.5 * np.square(x),
        dV=lambda x: np.asarray(x, dtype=float) * 1.0,
        d2V=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        c_minus=1.0, c_plus=1.0,
        kind=KIND_QUADRATIC, kernel_params=(0.0,),
    )


def dipole_gas(a: float) -> Potential:
    """V(x) = x^2/2 + a cos x, uniformly convex for |a| < 1."""
    a = float(a)
    if not np.isfinite(a) or abs(a) >= 1.0:
        raise ConvexityError(f"dipole_gas needs |a| < 1, got a={a}")
    return Potential(
        "dipole_gas", {"a": a},
        V=lambda x: 0.5 * np.square(x) + a * np.cos(x),
        dV=lambda x: np.asarray(x, dtype=float) - a * np.sin(x),
        d2V=lambda x: 1.0 - a * np.cos(x),
        c_minus=1.0 - abs(a), c_plus=1.0 + abs(a),
        kind=KIND_DIPOLE, kernel_params=(a,),
    )


REGISTRY = {"quadratic": quadratic, "dipole_gas": dipole_gas}


def from_spec(spec: dict) -> Potential:
    """Rebuild a shipped potential from its {name, params} record."""
    name = spec.get("name")
    if name not in REGISTRY:
        raise ParameterError(f"unknown potential {name!r}; known: {sorted(REGISTRY)}")
    try:
        return REGISTRY[name](**spec.get("params", {}))
    except TypeError as exc:
        raise ParameterError(f"bad parameters for {name}: {exc}") from None


@dataclass
class ValidationReport:
    name: str
    grid_halfwidth: float
    grid_step: float
    max_symmetry_defect: float
    d2V_min: float
    d2V_max: float
    max_dV_rel_error: float
    max_d2V_rel_error: float
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


def validate(p: Potential, grid_halfwidth: float = 50.0, grid_step: float = 1e-3,
             *, fd_step: float = 1e-4, fd_tol: float = 1e-6, sym_tol: float = 1e-12) -> ValidationReport:
    """Check symmetry, the convexity bounds and the supplied derivatives on a grid.

    Derivatives are compared with central differences of step ``fd_step``;
    the error is relative to max(1, |exact|).  Raises ValidationError naming the
    offending points when any check fails; otherwise returns the report.
    """
    if not (grid_halfwidth > 0 and grid_step > 0):
        raise ParameterError("grid half width and step must be positive")
    n = int(round(grid_halfwidth / grid_step))
    x = np.arange(0, n + 1) * grid_step
    x = np.concatenate([-x[:0:-1], x])

    def worst(defect, what, limit):
        bad = np.flatnonzero(~(defect <= limit))
        if bad.size:
            pts = ", ".join(f"{x[k]:.6g}" for k in bad[:5])
            return [f"{what} violated at x = {pts}" + (" ..." if bad.size > 5 else "")]
        return []

    V, dV, d2 = (np.asarray(f(x), dtype=float) for f in (p.V, p.dV, p.d2V))
    Vm = np.asarray(p.V(-x), dtype=float)
    sym = np.abs(V - Vm) / np.maximum(1.0, np.abs(V))
    h = fd_step
    fd1 = (np.asarray(p.V(x + h)) - np.asarray(p.V(x - h))) / (2 * h)
    fd2 = (np.asarray(p.dV(x + h)) - np.asarray(p.dV(x - h))) / (2 * h)
    e1 = np.abs(fd1 - dV) / np.maximum(1.0, np.abs(dV))
    e2 = np.abs(fd2 - d2) / np.maximum(1.0, np.abs(d2))

    failures = []
    failures += worst(sym, "symmetry V(x) = V(-x)", sym_tol)
    failures += worst(np.abs(dV + np.asarray(p.dV(-x))), "oddness of V'", sym_tol * max(1.0, np.abs(dV).max()))
    failures += worst(e1, "V' vs finite differences of V", fd_tol)
    failures += worst(e2, "V'' vs finite differences of V'", fd_tol)
    if not 0 < p.c_minus <= p.c_plus < np.inf:
        failures.append(f"declared bounds 0 < c- <= c+ < inf fail: {p.c_minus}, {p.c_plus}")
    slack = 1e-12
    low = np.flatnonzero(d2 < p.c_minus - slack)
    high = np.flatnonzero(d2 > p.c_plus + slack)
    for idx, what in ((low, "V'' >= c-"), (high, "V'' <= c+")):
        if idx.size:
            pts = ", ".join(f"{x[k]:.6g}" for k in idx[:5])
            failures.append(f"{what} violated at x = {pts}")

    rep = ValidationReport(p.name, float(grid_halfwidth), float(grid_step),
                           float(sym.max()), float(d2.min()), float(d2.max()),
                           float(e1.max()), float(e2.max()), failures)
    if failures:
        raise ValidationError(f"potential {p.name} failed validation: " + "; ".join(failures), rep)
    return rep
