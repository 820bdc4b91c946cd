"""Closed-form fidelity algebra for Werner-state repeater chains.

Everything here is a pure function of its arguments. Fidelities are plain
floats; the swap and BBPSSW maps accept anything in [0, 1] and are evaluated
as written, while the asymmetry-tolerance functions insist on entangled
inputs (F > 0.5).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

__all__ = [
    "DomainError",
    "DeltaRole",
    "HardwareParams",
    "DeltaMax",
    "Feasibility",
    "fidelity_from_werner",
    "werner_from_fidelity",
    "generation_probability",
    "swap_fidelity",
    "swap_partner_lower_bound",
    "purification_success_prob",
    "purified_fidelity",
    "purification_gain",
    "f2_min",
    "f1_max",
    "delta_tolerance",
    "should_purify",
    "find_delta_max",
    "golden_section_max",
    "chain_fidelity_limit",
    "purification_feasibility",
    "gain_grid",
    "grid_axis",
]

# Width of the "do not purify" band around zero gain.
BOUNDARY_EPS = 1e-9


class DomainError(ValueError):
    """Input outside the region where a formula is defined."""


class DeltaRole(enum.Enum):
    """Which input the tolerance is measured from."""

    AS_SUPERIOR = "superior"
    AS_INFERIOR = "inferior"


@dataclass(frozen=True)
class HardwareParams:
    eta_d: float
    eta_c: float
    length_km: float
    l_att_km: float = 22.0

    def __post_init__(self):
        for name in ("eta_d", "eta_c"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1], got {v}")
        if self.length_km < 0:
            raise DomainError(f"length_km must be >= 0, got {self.length_km}")
        if self.l_att_km <= 0:
            raise DomainError(f"l_att_km must be > 0, got {self.l_att_km}")


class DeltaMax(NamedTuple):
    f1_star: float
    f2_star: float
    delta_max: float


class Feasibility(NamedTuple):
    f_hat: float
    feasible: bool


def _require_entangled(f: float, name: str = "f") -> None:
    if not 0.5 < f <= 1.0:
        raise DomainError(f"{name} must lie in (0.5, 1], got {f}")


def fidelity_from_werner(w: float) -> float:
    if not 0.0 <= w <= 1.0:
        raise DomainError(f"Werner parameter must lie in [0, 1], got {w}")
    return (3.0 * w + 1.0) / 4.0


def werner_from_fidelity(f: float) -> float:
    if not 0.25 <= f <= 1.0:
        raise DomainError(f"Werner fidelity must lie in [1/4, 1], got {f}")
    return (4.0 * f - 1.0) / 3.0


def generation_probability(hw: HardwareParams) -> float:
    """Per-clock-cycle heralding probability of a midpoint (Barrett-Kok) link."""
    return 0.5 * hw.eta_d**2 * hw.eta_c**2 * math.exp(-hw.length_km / hw.l_att_km)


def swap_fidelity(f_ab, f_bc):
    """Fidelity after a Bell-state measurement joins two Werner pairs."""
    return 0.25 + 0.75 * ((4.0 * f_ab - 1.0) / 3.0) * ((4.0 * f_bc - 1.0) / 3.0)


def swap_partner_lower_bound(f_ab: float) -> float:
    """Smallest partner fidelity that keeps the swapped pair at F >= 1/2."""
    if f_ab <= 0.25:
        raise DomainError(f"bound undefined for f_ab <= 1/4, got {f_ab}")
    return 0.25 * (3.0 / (4.0 * f_ab - 1.0) + 1.0)


def purification_success_prob(f1, f2):
    return (8.0 / 9.0) * (f1 * f2) - (2.0 / 9.0) * (f1 + f2) + 5.0 / 9.0


def purified_fidelity(f1, f2):
    """BBPSSW output fidelity for two Werner inputs, conditioned on success.

    Works elementwise on numpy arrays as well as on floats.
    """
    p = purification_success_prob(f1, f2)
    if (p <= 0.0) if isinstance(p, float) else np.any(p <= 0.0):
        raise DomainError(f"zero purification success probability at ({f1}, {f2})")
    return (f1 * f2 + (1.0 - f1) * (1.0 - f2) / 9.0) / p


def purification_gain(f1: float, f2: float) -> float:
    """Output fidelity minus the better of the two inputs."""
    return purified_fidelity(f1, f2) - max(f1, f2)


def f2_min(f1: float) -> float:
    """Partner fidelity at which purifying with ``f1`` exactly breaks even."""
    _require_entangled(f1, "f1")
    return (2.0 * f1 * f1 - 6.0 * f1 + 1.0) / (8.0 * f1 * f1 - 12.0 * f1 + 1.0)


def f1_max(f2: float) -> float:
    """Largest superior fidelity that the inferior input ``f2`` can still improve."""
    _require_entangled(f2, "f2")
    disc = 28.0 * f2 * f2 - 26.0 * f2 + 7.0
    return (6.0 * f2 - 3.0 + math.sqrt(disc)) / (2.0 * (4.0 * f2 - 1.0))


def delta_tolerance(f: float, role: DeltaRole = DeltaRole.AS_SUPERIOR) -> float:
    """Largest input asymmetry that still yields a positive gain.

    With ``AS_SUPERIOR`` the tolerance is measured downward from ``f`` as the
    better input; with ``AS_INFERIOR`` it is measured upward from ``f`` as the
    worse one. The two differ for the same ``f``.
    """
    if role is DeltaRole.AS_SUPERIOR:
        return f - f2_min(f)
    if role is DeltaRole.AS_INFERIOR:
        return f1_max(f) - f
    raise TypeError(f"unknown role {role!r}")


def should_purify(f1: float, f2: float) -> bool:
    """Decision rule: purify only when the asymmetry is inside the tolerance.

    Inputs within ``BOUNDARY_EPS`` of the break-even curve are rejected,
    since a zero-gain attempt only burns a pair.
    """
    _require_entangled(f1, "f1")
    _require_entangled(f2, "f2")
    hi = max(f1, f2)
    return abs(f1 - f2) < delta_tolerance(hi, DeltaRole.AS_SUPERIOR) - BOUNDARY_EPS


def golden_section_max(func, lo: float, hi: float, tol: float = 1e-9, max_iter: int = 200):
    """Maximise a unimodal ``func`` on [lo, hi]; returns ``(x, func(x))``."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = func(c), func(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = func(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = func(d)
    x = 0.5 * (a + b)
    return x, func(x)


def find_delta_max(grid_points: int = 1000, tol: float = 1e-9) -> DeltaMax:
    """Universal maximum of the superior-referenced tolerance over (0.5, 1).

    A uniform pre-scan brackets the peak, then golden-section search refines
    it. The interior grid excludes both endpoints.
    """
    xs = [0.5 + 0.5 * (i + 1) / (grid_points + 1) for i in range(grid_points)]
    ys = [delta_tolerance(x) for x in xs]
    k = max(range(grid_points), key=ys.__getitem__)
    lo = xs[k - 1] if k > 0 else 0.5 + 1e-12
    hi = xs[k + 1] if k < grid_points - 1 else 1.0
    f1_star, dmax = golden_section_max(delta_tolerance, lo, hi, tol=tol)
    return DeltaMax(f1_star, f2_min(f1_star), dmax)


def chain_fidelity_limit(link_fidelities: Iterable[float]) -> float:
    """End-to-end fidelity of a chain swapped with no memory decay."""
    fs = list(link_fidelities)
    if not fs:
        raise ValueError("chain_fidelity_limit needs at least one link")
    prod = 1.0
    for f in fs:
        if not 0.25 <= f <= 1.0:
            raise DomainError(f"link fidelity must lie in [1/4, 1], got {f}")
        prod *= (4.0 * f - 1.0) / 3.0
    if len(fs) == 1:
        return fs[0]
    return 0.25 + 0.75 * prod


def purification_feasibility(f1: float, f_th: float) -> Feasibility:
    """Best purified fidelity reachable with ``f1`` as one of the inputs.

    Two optimistic partners are considered: an identical pair, and a partner
    sitting ``delta_tolerance(f1)`` above ``f1`` (capped at 1).
    """
    _require_entangled(f1, "f1")
    sym = purified_fidelity(f1, f1)
    partner = min(f1 + delta_tolerance(f1, DeltaRole.AS_SUPERIOR), 1.0)
    lifted = purified_fidelity(partner, f1)
    f_hat = max(sym, lifted)
    return Feasibility(f_hat, f_hat >= f_th)


def grid_axis(resolution: int) -> np.ndarray:
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    return np.linspace(0.5, 1.0, resolution)


def gain_grid(resolution: int = 201) -> np.ndarray:
    """Purification gain over [0.5, 1]^2; ``grid[i, j]`` is gain(axis[i], axis[j])."""
    axis = grid_axis(resolution)
    f1 = axis[:, None]
    f2 = axis[None, :]
    return purified_fidelity(f1, f2) - np.maximum(f1, f2)


def fold_swaps(link_fidelities: Sequence[float]) -> float:
    """Left fold of :func:`swap_fidelity`; an independent route to the chain limit."""
    out = link_fidelities[0]
    for f in link_fidelities[1:]:
        out = swap_fidelity(out, f)
    return out
