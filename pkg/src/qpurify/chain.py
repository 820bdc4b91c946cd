"""Discrete-time stochastic engine for an n-hop repeater chain.

Nodes are numbered ``0..hops`` and elementary link ``i`` joins nodes ``i`` and
``i + 1``. Every link that holds no pair makes one heralded generation
attempt per timestep. Swaps are instantaneous and happen in the timestep in
which both inputs exist; a purification attempt occupies one timestep.

Rather than drawing a Bernoulli variable for every link at every timestep,
the episode loop draws each link's waiting time from the geometric
distribution directly and jumps from one event to the next. The herald-time
distribution is the same; the loop just skips the idle steps.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, fields
from typing import NamedTuple, Sequence

import numpy as np

from .calculus import purification_success_prob, purified_fidelity, swap_fidelity
from .memory import MemoryModel, decay_function, decayed_fidelity, emm

__all__ = [
    "ChainParams",
    "EntangledPair",
    "Counters",
    "Event",
    "Episode",
    "RngStream",
    "SimClock",
    "current_fidelity",
    "attempt_generation",
    "attempt_swap",
    "attempt_purification",
    "run_swap_asap",
    "run_episode",
    "replay_events",
]

GENERATION_MODES = ("sequential", "parallel")


@dataclass(frozen=True)
class ChainParams:
    """Configuration of one repeater chain.

    ``link_f0`` accepts a single fidelity (used for every link) or one value
    per link. ``cutoff`` is the absolute trial horizon in timesteps.
    ``discard_below`` drops stored pairs whose fidelity has fallen under the
    given value when they are next used; ``None`` keeps everything.
    """

    hops: int = 2
    link_f0: float | Sequence[float] = 0.99
    p_e: float = 0.1
    p_s: float = 0.9
    memory: MemoryModel = field(default_factory=lambda: emm(100.0))
    cutoff: int = 10_000
    generation_mode: str = "sequential"
    seed: int = 0
    discard_below: float | None = None

    def __post_init__(self):
        if not isinstance(self.hops, int) or self.hops < 1:
            raise ValueError(f"hops must be an integer >= 1, got {self.hops!r}")
        f0 = self.link_f0
        f0 = tuple(float(x) for x in f0) if isinstance(f0, (list, tuple)) else (float(f0),) * self.hops
        if len(f0) != self.hops:
            raise ValueError(f"need {self.hops} link fidelities, got {len(f0)}")
        for f in f0:
            if not 0.5 < f <= 1.0:
                raise ValueError(f"link fidelity must lie in (0.5, 1], got {f}")
        object.__setattr__(self, "link_f0", f0)
        for name in ("p_e", "p_s"):
            p = getattr(self, name)
            if not 0.0 < p <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {p}")
        if not isinstance(self.memory, MemoryModel):
            raise TypeError("memory must be a MemoryModel")
        if self.cutoff < 1:
            raise ValueError(f"cutoff must be >= 1, got {self.cutoff}")
        if self.generation_mode not in GENERATION_MODES:
            raise ValueError(f"generation_mode must be one of {GENERATION_MODES}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def f0(self) -> float:
        """The link fidelity when all links share one value."""
        if len(set(self.link_f0)) != 1:
            raise ValueError("links have heterogeneous fidelities")
        return self.link_f0[0]

    def replace(self, **changes) -> "ChainParams":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        if "hops" in changes and "link_f0" not in changes and len(set(self.link_f0)) == 1:
            kw["link_f0"] = self.link_f0[0]
        kw.update(changes)
        return ChainParams(**kw)


@dataclass(slots=True)
class EntangledPair:
    left: int
    right: int
    f_herald: float
    t_herald: int

    def __post_init__(self):
        if self.left >= self.right:
            raise ValueError(f"bad span ({self.left}, {self.right})")

    @property
    def span(self) -> tuple[int, int]:
        return (self.left, self.right)


@dataclass(slots=True)
class SimClock:
    now: int = 0

    def advance_to(self, t: int) -> None:
        if t < self.now:
            raise ValueError(f"clock cannot move back from {self.now} to {t}")
        self.now = t


@dataclass(slots=True)
class Counters:
    generations: int = 0
    swaps: int = 0
    swap_failures: int = 0
    purifications: int = 0
    purification_failures: int = 0
    delta_aborts: int = 0
    feasibility_aborts: int = 0
    threshold_misses: int = 0
    expirations: int = 0
    discards: int = 0

    def as_dict(self) -> dict[str, int]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class Event(NamedTuple):
    """One line of a trial's event log.

    ``t`` is when the operation read its inputs, ``t_out`` when its output
    pair exists. ``inputs`` holds ``(left, right, f_herald, t_herald)`` of
    each consumed pair.
    """

    t: int
    kind: str
    left: int
    right: int
    fidelity: float | None
    t_out: int
    inputs: tuple = ()


class Episode(NamedTuple):
    t: int
    fidelity: float
    pair: EntangledPair


class RngStream:
    """Deterministic random stream keyed by a seed and integer labels.

    The labels are mixed into the seed with :class:`numpy.random.SeedSequence`;
    draws come from :class:`random.Random`, whose output for a given seed does
    not depend on the platform.
    """

    __slots__ = ("_rng", "random", "key", "_log_q")

    def __init__(self, seed: int, *labels: int):
        words = np.random.SeedSequence(int(seed), spawn_key=tuple(int(x) for x in labels)).generate_state(4)
        self.key = (int(seed),) + tuple(labels)
        self._rng = random.Random(int.from_bytes(words.tobytes(), "little"))
        self.random = self._rng.random
        self._log_q: dict[float, float] = {}

    def bernoulli(self, p: float) -> bool:
        return self.random() < p

    def geometric(self, p: float) -> int:
        """Number of trials up to and including the first success (support >= 1)."""
        if p >= 1.0:
            return 1
        lq = self._log_q.get(p)
        if lq is None:
            lq = self._log_q[p] = math.log1p(-p)
        return int(math.log1p(-self.random()) / lq) + 1


def current_fidelity(pair: EntangledPair, now: int, model: MemoryModel) -> float:
    if now < pair.t_herald:
        raise ValueError(f"pair heralded at {pair.t_herald} observed at {now}")
    return decayed_fidelity(model, pair.f_herald, now - pair.t_herald)


def attempt_generation(link: int, now: int, rng: RngStream, params: ChainParams) -> EntangledPair | None:
    """One heralded generation attempt on ``link`` during timestep ``now``."""
    if not 0 <= link < params.hops:
        raise ValueError(f"link {link} outside chain of {params.hops} hops")
    if rng.random() < params.p_e:
        return EntangledPair(link, link + 1, params.link_f0[link], now)
    return None


def attempt_swap(a: EntangledPair, b: EntangledPair, now: int, rng: RngStream, params: ChainParams) -> EntangledPair | None:
    """Bell-state measurement at the shared node; inputs are consumed either way."""
    if a.right != b.left:
        raise ValueError(f"spans {a.span} and {b.span} are not adjacent")
    fa = current_fidelity(a, now, params.memory)
    fb = current_fidelity(b, now, params.memory)
    if rng.random() < params.p_s:
        return EntangledPair(a.left, b.right, swap_fidelity(fa, fb), now)
    return None


def _purify_draw(fa: float, fb: float, rng: RngStream) -> tuple[bool, float]:
    ok = rng.random() < purification_success_prob(fa, fb)
    return ok, purified_fidelity(fa, fb)


def attempt_purification(
    a: EntangledPair, b: EntangledPair, now: int, rng: RngStream, model: MemoryModel
) -> tuple[bool, EntangledPair | None]:
    """BBPSSW on two pairs sharing a span; the output exists at ``now + 1``."""
    if a.span != b.span:
        raise ValueError(f"cannot purify {a.span} with {b.span}")
    ok, f = _purify_draw(current_fidelity(a, now, model), current_fidelity(b, now, model), rng)
    if ok:
        return True, EntangledPair(a.left, a.right, f, now + 1)
    return False, None


def _pair_record(p: EntangledPair) -> tuple:
    return (p.left, p.right, p.f_herald, p.t_herald)


def run_swap_asap(
    params: ChainParams,
    rng: RngStream,
    start: int = 0,
    deadline: int | None = None,
    counters: Counters | None = None,
    log: list | None = None,
) -> Episode | None:
    """Produce one end-to-end pair by swap-ASAP, starting from an empty chain.

    Returns ``None`` when the pair is not ready by ``deadline`` (default: the
    trial cutoff).
    """
    return run_episode(params, rng, start, deadline, counters, log, purify_links=False)


def run_episode(
    params: ChainParams,
    rng: RngStream,
    start: int = 0,
    deadline: int | None = None,
    counters: Counters | None = None,
    log: list | None = None,
    purify_links: bool = False,
    gains: list | None = None,
) -> Episode | None:
    """Event loop behind :func:`run_swap_asap` and the purify-first variant.

    With ``purify_links`` every link owns two memory slots and purifies them
    as soon as both hold a pair; only the purified pair takes part in
    swapping. In ``sequential`` generation mode a link fills its second slot
    only after the first one heralds; in ``parallel`` mode both slots attempt
    generation at once. A failed purification empties both slots, and a
    failed swap sends every link it covered back to the empty state.
    ``gains`` collects output-minus-best-input for every link purification.
    """
    n = params.hops
    horizon = params.cutoff if deadline is None else deadline
    model = params.memory
    decay = decay_function(model)
    p_e = params.p_e
    p_s = params.p_s
    rand = rng.random
    f0s = params.link_f0
    cnt = counters if counters is not None else Counters()
    geometric = rng.geometric
    tau = model.cutoff_tau if model.kind == "cmm" else None
    life = None if tau is None else math.floor(tau) + 1  # age at which a pair is gone
    floor = params.discard_below
    ns = 2 if purify_links else 1
    staggered = purify_links and params.generation_mode == "sequential"
    never = math.inf

    # slot j = link * ns + k
    nxt = [never] * (n * ns)
    held: list[EntangledPair | None] = [None] * (n * ns)
    pur_t = [never] * n
    pur_out: list[EntangledPair | None] = [None] * n
    segs: list[EntangledPair] = []

    def reset(lo: int, hi: int, t: int) -> None:
        for i in range(lo, hi):
            j = i * ns
            nxt[j] = t + geometric(p_e)
            held[j] = None
            if ns == 2:
                nxt[j + 1] = never if staggered else t + geometric(p_e)
                held[j + 1] = None
                pur_t[i] = never
                pur_out[i] = None

    reset(0, n, start)

    while True:
        t = min(nxt)
        if purify_links:
            tp = min(pur_t)
            if tp < t:
                t = tp
        if life is not None:
            for s in segs:
                if s.t_herald + life < t:
                    t = s.t_herald + life
            for p in held:
                if p is not None and p.t_herald + life < t:
                    t = p.t_herald + life
        if t > horizon:
            return None

        if life is not None:
            alive = []
            for s in segs:
                if t - s.t_herald >= life:
                    cnt.expirations += 1
                    if log is not None:
                        log.append(Event(t, "expire", s.left, s.right, None, t, (_pair_record(s),)))
                    reset(s.left, s.right, t)
                else:
                    alive.append(s)
            segs = alive
            for j, p in enumerate(held):
                if p is not None and t - p.t_herald >= life:
                    cnt.expirations += 1
                    held[j] = None
                    nxt[j] = t + geometric(p_e)

        fresh = False
        filled = []
        for j in [j for j, v in enumerate(nxt) if v == t]:
            nxt[j] = never
            i = j // ns
            pair = EntangledPair(i, i + 1, f0s[i], t)
            cnt.generations += 1
            if log is not None:
                log.append(Event(t, "herald", i, i + 1, f0s[i], t))
            if ns == 1:
                segs.append(pair)
                fresh = True
            else:
                held[j] = pair
                filled.append(i)
                if staggered and j % 2 == 0:
                    nxt[j + 1] = t + geometric(p_e)

        if purify_links:
            for i in [i for i, v in enumerate(pur_t) if v == t]:
                out = pur_out[i]
                pur_t[i] = never
                pur_out[i] = None
                if out is None:
                    reset(i, i + 1, t)
                else:
                    segs.append(out)
                    fresh = True
            for i in filled:
                a, b = held[2 * i], held[2 * i + 1]
                if a is None or b is None:
                    continue
                held[2 * i] = held[2 * i + 1] = None
                fa = decay(a.f_herald, t - a.t_herald)
                fb = decay(b.f_herald, t - b.t_herald)
                ok, f_pur = _purify_draw(fa, fb, rng)
                cnt.purifications += 1
                if gains is not None:
                    gains.append(f_pur - max(fa, fb))
                if log is not None:
                    log.append(Event(t, "purify" if ok else "purify_fail", i, i + 1, f_pur if ok else None,
                                     t + 1, (_pair_record(a), _pair_record(b))))
                if ok:
                    pur_out[i] = EntangledPair(i, i + 1, f_pur, t + 1)
                else:
                    cnt.purification_failures += 1
                pur_t[i] = t + 1

        if not fresh:
            continue
        segs.sort(key=_left)
        j = 0
        while j < len(segs) - 1:
            a, b = segs[j], segs[j + 1]
            if a.right != b.left:
                j += 1
                continue
            if floor is not None:
                dropped = [s for s in (a, b) if decay(s.f_herald, t - s.t_herald) < floor]
                if dropped:
                    for s in dropped:
                        cnt.discards += 1
                        if log is not None:
                            log.append(Event(t, "discard", s.left, s.right, None, t, (_pair_record(s),)))
                        reset(s.left, s.right, t)
                        segs.remove(s)
                    continue
            # inline attempt_swap
            fa = decay(a.f_herald, t - a.t_herald)
            fb = decay(b.f_herald, t - b.t_herald)
            merged = EntangledPair(a.left, b.right, swap_fidelity(fa, fb), t) if rand() < p_s else None
            if log is not None:
                log.append(Event(t, "swap" if merged else "swap_fail", a.left, b.right,
                                 merged.f_herald if merged else None, t, (_pair_record(a), _pair_record(b))))
            if merged is None:
                cnt.swap_failures += 1
                reset(a.left, b.right, t)
                del segs[j : j + 2]
            else:
                cnt.swaps += 1
                segs[j : j + 2] = [merged]
        if len(segs) == 1 and segs[0].left == 0 and segs[0].right == n:
            e2e = segs[0]
            return Episode(t, e2e.f_herald, e2e)


def _left(s: EntangledPair) -> int:
    return s.left


def replay_events(events: Sequence[Event], params: ChainParams) -> dict[tuple[int, int, int], float]:
    """Recompute every produced pair's fidelity from the event log alone.

    Herald fidelities come from ``params.link_f0``; swap and purification
    outputs are rebuilt from the replayed fidelities of their inputs with the
    calculus and memory functions. Returns ``{(left, right, t_herald): f}``.
    """
    model = params.memory
    known: dict[tuple[int, int, int], float] = {}

    def lookup(rec):
        left, right, f_logged, t_h = rec
        return known.get((left, right, t_h), f_logged)

    for ev in events:
        if ev.kind == "herald":
            known[(ev.left, ev.right, ev.t)] = params.link_f0[ev.left]
        elif ev.kind in ("swap", "purify"):
            fa, fb = (decayed_fidelity(model, lookup(r), ev.t - r[3]) for r in ev.inputs)
            if ev.kind == "swap":
                known[(ev.left, ev.right, ev.t_out)] = swap_fidelity(fa, fb)
            else:
                known[(ev.left, ev.right, ev.t_out)] = purified_fidelity(fa, fb)
    return known
