"""Entanglement-delivery policies over the chain engine.

Every policy runs one trial from time 0 and returns a :class:`TrialOutcome`.
Trials end on delivery, or when the stop condition's horizon (the time
budget, else the chain cutoff) is reached.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .calculus import (
    DomainError,
    chain_fidelity_limit,
    purification_feasibility,
    purification_success_prob,
    purified_fidelity,
    should_purify,
)
from .chain import ChainParams, Counters, Event, RngStream, run_episode, run_swap_asap
from .memory import decayed_fidelity, is_expired

__all__ = [
    "PolicyKind",
    "StopCondition",
    "TrialOutcome",
    "run_no_pur",
    "run_sp",
    "run_ps",
    "run_delta_purify",
    "run_policy",
]


class PolicyKind(enum.Enum):
    NO_PUR = "no-pur"
    SWAP_PURIFY = "sp"
    PURIFY_SWAP = "ps"
    DELTA_PURIFY = "delta-purify"

    @property
    def index(self) -> int:
        return list(PolicyKind).index(self)

    @classmethod
    def parse(cls, name: str) -> "PolicyKind":
        key = name.strip().lower().replace("_", "-")
        aliases = {"nopur": "no-pur", "swap-purify": "sp", "purify-swap": "ps", "deltapurify": "delta-purify", "delta": "delta-purify"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown policy {name!r}; choose from {[p.value for p in cls]}") from None


@dataclass(frozen=True)
class StopCondition:
    """Delivery objective.

    fidelity: deliver the first pair with F >= f_th, no time limit but the cutoff.
    time: deliver any pair within ``budget`` timesteps.
    joint: deliver a pair with F >= f_th within ``budget`` timesteps.
    """

    mode: str
    f_th: float | None = None
    budget: int | None = None

    def __post_init__(self):
        if self.mode not in ("fidelity", "time", "joint"):
            raise ValueError(f"unknown stop mode {self.mode!r}")
        if self.mode in ("fidelity", "joint"):
            if self.f_th is None or not 0.5 < self.f_th <= 1.0:
                raise ValueError(f"f_th must lie in (0.5, 1], got {self.f_th}")
        if self.mode in ("time", "joint"):
            if self.budget is None or self.budget < 1:
                raise ValueError(f"budget must be >= 1, got {self.budget}")

    @classmethod
    def fidelity(cls, f_th: float) -> "StopCondition":
        return cls("fidelity", f_th=f_th)

    @classmethod
    def time(cls, budget: int) -> "StopCondition":
        return cls("time", budget=budget)

    @classmethod
    def joint(cls, f_th: float, budget: int) -> "StopCondition":
        return cls("joint", f_th=f_th, budget=budget)

    def horizon(self, cutoff: int) -> int:
        return cutoff if self.budget is None else min(self.budget, cutoff)

    def accepts(self, f: float) -> bool:
        return self.f_th is None or f >= self.f_th


@dataclass
class TrialOutcome:
    delivered: bool
    t_deliver: int | None = None
    f_deliver: float | None = None
    gain_samples: list[float] = field(default_factory=list)
    counters: Counters = field(default_factory=Counters)
    events: list[Event] | None = None

    def key(self) -> tuple:
        """Everything except the event log, for equality checks."""
        return (self.delivered, self.t_deliver, self.f_deliver, tuple(self.gain_samples), self.counters.as_dict())


def _deliver(out: TrialOutcome, t: int, f: float, log, hops: int) -> TrialOutcome:
    out.delivered, out.t_deliver, out.f_deliver = True, t, f
    if log is not None:
        log.append(Event(t, "deliver", 0, hops, f, t))
    return out


def _new_outcome(debug: bool) -> tuple[TrialOutcome, list | None]:
    log = [] if debug else None
    return TrialOutcome(False, events=log), log


def run_no_pur(params: ChainParams, stop: StopCondition, rng: RngStream, debug: bool = False) -> TrialOutcome:
    """Swap-ASAP end-to-end pairs, discarding any below threshold, until one is accepted."""
    out, log = _new_outcome(debug)
    horizon = stop.horizon(params.cutoff)
    t = 0
    while True:
        ep = run_swap_asap(params, rng, t, horizon, out.counters, log)
        if ep is None:
            return out
        if stop.accepts(ep.fidelity):
            return _deliver(out, ep.t, ep.fidelity, log, params.hops)
        out.counters.threshold_misses += 1
        t = ep.t


def _two_pairs(params: ChainParams, rng: RngStream, t: int, horizon: int, cnt: Counters, log):
    """Produce the two end-to-end pairs of one SP-style cycle.

    Returns ``(first, second, restart_time)``; ``first`` is the earlier pair.
    ``first`` is None when the horizon is hit, ``second`` is None when the
    first pair expired in memory before its partner arrived.
    """
    if params.generation_mode == "parallel":
        a = run_swap_asap(params, rng, t, horizon, cnt, log)
        b = run_swap_asap(params, rng, t, horizon, cnt, log)
        if a is None or b is None:
            return None, None, None
        first, second = (a, b) if a.t <= b.t else (b, a)
        if is_expired(params.memory, second.t - first.t):
            cnt.expirations += 1
            return first, None, second.t
        return first, second, None
    first = run_swap_asap(params, rng, t, horizon, cnt, log)
    if first is None:
        return None, None, None
    tau = params.memory.cutoff_tau if params.memory.kind == "cmm" else None
    deadline = horizon if tau is None else min(horizon, first.t + int(tau))
    second = run_swap_asap(params, rng, first.t, deadline, cnt, log)
    if second is None:
        if deadline < horizon:
            cnt.expirations += 1
            return first, None, first.t + int(tau) + 1
        return None, None, None
    return first, second, None


def _purify_pair(first, second, params, rng, out, log, record_gain=True):
    """Purify the stored first pair with the fresh second one at ``second.t``.

    Returns ``(success, f_pur)``; the output exists at ``second.t + 1``.
    """
    t2 = second.t
    f1p = decayed_fidelity(params.memory, first.fidelity, t2 - first.t)
    f2 = second.fidelity
    f_pur = purified_fidelity(f1p, f2)
    if record_gain:
        out.gain_samples.append(f_pur - max(f1p, f2))
    ok = rng.random() < purification_success_prob(f1p, f2)
    out.counters.purifications += 1
    if not ok:
        out.counters.purification_failures += 1
    if log is not None:
        inputs = (
            (0, params.hops, first.fidelity, first.t),
            (0, params.hops, second.fidelity, second.t),
        )
        log.append(Event(t2, "purify" if ok else "purify_fail", 0, params.hops, f_pur if ok else None, t2 + 1, inputs))
    return ok, f_pur


def run_sp(params: ChainParams, stop: StopCondition, rng: RngStream, debug: bool = False) -> TrialOutcome:
    """Swap-Purify: two end-to-end pairs, then one purification at the end nodes.

    Every completed attempt logs its gain (computed from the inputs, whatever
    the success draw). A failed attempt, or a result below threshold,
    discards everything and the cycle restarts from an empty chain.
    """
    out, log = _new_outcome(debug)
    horizon = stop.horizon(params.cutoff)
    t = 0
    while True:
        first, second, restart = _two_pairs(params, rng, t, horizon, out.counters, log)
        if first is None:
            return out
        if second is None:
            t = restart
            continue
        ok, f_pur = _purify_pair(first, second, params, rng, out, log)
        t = second.t + 1
        if t > horizon:
            return out
        if ok and stop.accepts(f_pur):
            return _deliver(out, t, f_pur, log, params.hops)
        if ok:
            out.counters.threshold_misses += 1


def run_ps(params: ChainParams, stop: StopCondition, rng: RngStream, debug: bool = False) -> TrialOutcome:
    """Purify-Swap: purify on every elementary link, then swap-ASAP the results."""
    out, log = _new_outcome(debug)
    horizon = stop.horizon(params.cutoff)
    t = 0
    while True:
        ep = run_episode(params, rng, t, horizon, out.counters, log, purify_links=True, gains=out.gain_samples)
        if ep is None:
            return out
        if stop.accepts(ep.fidelity):
            return _deliver(out, ep.t, ep.fidelity, log, params.hops)
        out.counters.threshold_misses += 1
        t = ep.t


def run_delta_purify(params: ChainParams, f_th: float, rng: RngStream, debug: bool = False) -> TrialOutcome:
    """Threshold-aware purification.

    If the threshold is reachable by swapping alone the policy is exactly
    No-Pur. Otherwise each cycle checks that the first pair can still reach
    the threshold after purification, then only purifies when the observed
    asymmetry of the two pairs is within tolerance.
    """
    stop = StopCondition.fidelity(f_th)
    if f_th <= chain_fidelity_limit(params.link_f0):
        return run_no_pur(params, stop, rng, debug)

    out, log = _new_outcome(debug)
    cnt = out.counters
    horizon = params.cutoff
    t = 0
    while True:
        first = run_swap_asap(params, rng, t, horizon, cnt, log)
        if first is None:
            return out
        try:
            feasible = purification_feasibility(first.fidelity, f_th).feasible
        except DomainError:
            feasible = False
        if not feasible:
            cnt.feasibility_aborts += 1
            if log is not None:
                log.append(Event(first.t, "feasibility_abort", 0, params.hops, first.fidelity, first.t))
            t = first.t
            continue

        tau = params.memory.cutoff_tau if params.memory.kind == "cmm" else None
        deadline = horizon if tau is None else min(horizon, first.t + int(tau))
        second = run_swap_asap(params, rng, first.t, deadline, cnt, log)
        if second is None:
            if deadline < horizon:
                cnt.expirations += 1
                t = first.t + int(tau) + 1
                continue
            return out

        f1p = decayed_fidelity(params.memory, first.fidelity, second.t - first.t)
        try:
            go = should_purify(f1p, second.fidelity)
        except DomainError:
            go = False
        if not go:
            cnt.delta_aborts += 1
            if log is not None:
                log.append(Event(second.t, "delta_abort", 0, params.hops, None, second.t,
                                 ((0, params.hops, f1p, second.t), (0, params.hops, second.fidelity, second.t))))
            t = second.t
            continue

        ok, f_pur = _purify_pair(first, second, params, rng, out, log)
        t = second.t + 1
        if t > horizon:
            return out
        if ok and f_pur >= f_th:
            return _deliver(out, t, f_pur, log, params.hops)
        if ok:
            cnt.threshold_misses += 1


def run_policy(kind: PolicyKind, params: ChainParams, stop: StopCondition, rng: RngStream, debug: bool = False) -> TrialOutcome:
    if kind is PolicyKind.NO_PUR:
        return run_no_pur(params, stop, rng, debug)
    if kind is PolicyKind.SWAP_PURIFY:
        return run_sp(params, stop, rng, debug)
    if kind is PolicyKind.PURIFY_SWAP:
        return run_ps(params, stop, rng, debug)
    if kind is PolicyKind.DELTA_PURIFY:
        if stop.mode != "fidelity":
            raise ValueError("delta-purify is defined for the fidelity-constrained objective only")
        return run_delta_purify(params, stop.f_th, rng, debug)
    raise TypeError(f"unknown policy {kind!r}")
