"""Quantum-memory decoherence models for stored Werner pairs.

Time is measured in simulator timesteps. Decay is evaluated lazily from a
pair's herald fidelity and the elapsed storage time, so a model is just a
map ``(f0, dt) -> f``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["MemoryModel", "MemoryExpired", "cmm", "lmm", "emm", "decayed_fidelity", "decay_function", "is_expired"]

KINDS = ("cmm", "lmm", "emm")


class MemoryExpired(Exception):
    """A constant-model pair was read after its lifetime ran out."""


@dataclass(frozen=True)
class MemoryModel:
    """Decoherence model.

    kind : "cmm", "lmm" or "emm"
    t_coh : coherence time constant, required (> 0) for lmm/emm
    cutoff_tau : cmm lifetime; ``None`` means pairs never expire
    """

    kind: str
    t_coh: float | None = None
    cutoff_tau: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"memory kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "cmm":
            if self.cutoff_tau is not None and self.cutoff_tau < 0:
                raise ValueError(f"cutoff_tau must be >= 0, got {self.cutoff_tau}")
        elif self.t_coh is None or not self.t_coh > 0:
            raise ValueError(f"{self.kind} needs t_coh > 0, got {self.t_coh}")

    def __str__(self):
        if self.kind == "cmm":
            return "cmm" if self.cutoff_tau is None else f"cmm(tau={self.cutoff_tau:g})"
        return f"{self.kind}(t_coh={self.t_coh:g})"


def cmm(cutoff_tau: float | None = None) -> MemoryModel:
    return MemoryModel("cmm", cutoff_tau=cutoff_tau)


def lmm(t_coh: float) -> MemoryModel:
    return MemoryModel("lmm", t_coh=t_coh)


def emm(t_coh: float) -> MemoryModel:
    return MemoryModel("emm", t_coh=t_coh)


def is_expired(model: MemoryModel, dt: float) -> bool:
    # dt == tau is still alive
    return model.kind == "cmm" and model.cutoff_tau is not None and dt > model.cutoff_tau


def decay_function(model: MemoryModel):
    """Return ``decay(f0, dt)`` specialised to ``model``, without validation.

    Callers must pass ``dt >= 0``; a cmm lifetime is not checked here.
    """
    if model.kind == "emm":
        t_coh = model.t_coh
        exp = math.exp

        def decay(f0, dt):
            return 0.25 + (f0 - 0.25) * exp(-dt / t_coh)

    elif model.kind == "lmm":
        t_coh = model.t_coh

        def decay(f0, dt):
            if f0 <= 0.5:
                return f0
            f = f0 - dt * ((f0 - 0.5) / t_coh)
            return f if f > 0.5 else 0.5

    else:

        def decay(f0, dt):
            return f0

    return decay


def decayed_fidelity(model: MemoryModel, f0: float, dt: float) -> float:
    """Fidelity of a pair heralded at ``f0`` after ``dt`` timesteps in memory.

    emm: the Werner parameter decays as ``exp(-dt / t_coh)``, so the fidelity
        relaxes toward 1/4.
    lmm: constant slope ``(f0 - 1/2) / t_coh``, clamped at 1/2. Pairs already
        at or below 1/2 are left where they are.
    cmm: unchanged; raises :class:`MemoryExpired` once ``dt`` exceeds the
        lifetime.
    """
    if dt < 0:
        raise ValueError(f"elapsed time must be >= 0, got {dt}")
    kind = model.kind
    if kind == "emm":
        return 0.25 + (f0 - 0.25) * math.exp(-dt / model.t_coh)
    if kind == "lmm":
        if f0 <= 0.5:
            return f0
        return max(0.5, f0 - dt * ((f0 - 0.5) / model.t_coh))
    if is_expired(model, dt):
        raise MemoryExpired(f"pair stored {dt} > tau={model.cutoff_tau}")
    return f0


def lmm_stepwise(f0: float, t_coh: float, steps: int) -> float:
    """Apply the one-step linear recursion ``steps`` times (reference route)."""
    rate = (f0 - 0.5) / t_coh
    f = f0
    for _ in range(steps):
        f = max(0.5, f - rate)
    return f
