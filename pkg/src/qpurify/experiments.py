"""Monte Carlo harness: experiment cells, seeding and metric aggregation.

An experiment is a grid of cells ``(policy, hops, f_th, budget)``. Every
trial in every cell draws from its own stream, keyed by the master seed, the
policy (unless common random numbers are requested), the cell coordinates and
the trial index, so any single trial can be replayed on its own.

The budget is deliberately left out of the key. A trial run under budget
``N`` consumes the same draws as under any larger budget up to the point
where it is cut off, which makes delivery rates exactly monotone in ``N``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .chain import ChainParams, Counters, RngStream
from .memory import MemoryModel, cmm, emm, lmm
from .policies import PolicyKind, StopCondition, TrialOutcome, run_policy

__all__ = [
    "ExperimentSpec",
    "Cell",
    "CellResult",
    "MetricsSummary",
    "nearest_rank",
    "aggregate_metrics",
    "trial_rng",
    "run_cell",
    "run_experiment",
    "gain_distribution_experiment",
    "objective1_run",
    "objective2_run",
    "objective3_sweep",
    "scalability_sweep",
    "delta_purify_eval",
    "calibrate_t_coh",
    "CALIBRATED_T_COH",
    "EMM_TARGET_FRACTION",
    "SENSITIVITY_T_COH",
    "manifest",
    "spec_from_manifest",
]

# EMM t_coh at which SP's positive-gain fraction at the default operating
# point lands near the target below (see calibrate_t_coh)
CALIBRATED_T_COH = 55.0
EMM_TARGET_FRACTION = 0.143
# t_coh range over which both emm and lmm keep the positive-gain fraction
# below one half and the mean gain negative at the default operating point
SENSITIVITY_T_COH = (25.0, 150.0)

SMOKE_TRIALS = 1_000
FULL_TRIALS = 100_000


@dataclass(frozen=True)
class Cell:
    policy: PolicyKind
    hops: int
    f_th: float | None
    budget: int | None

    def stop(self) -> StopCondition:
        if self.budget is None:
            return StopCondition.fidelity(self.f_th)
        if self.f_th is None:
            return StopCondition.time(self.budget)
        return StopCondition.joint(self.f_th, self.budget)


@dataclass(frozen=True)
class ExperimentSpec:
    """Grid of cells plus the trial count and seed shared by all of them.

    ``f_th`` and ``budgets`` may contain ``None`` (no fidelity constraint,
    no time budget); each cell needs at least one of the two. An empty
    ``hops`` axis means ``params.hops``.
    """

    policies: tuple[PolicyKind, ...]
    params: ChainParams = field(default_factory=ChainParams)
    f_th: tuple[float | None, ...] = (None,)
    budgets: tuple[int | None, ...] = (None,)
    hops: tuple[int, ...] = ()
    trials: int = SMOKE_TRIALS
    master_seed: int = 0
    common_random_numbers: bool = False

    def __post_init__(self):
        pol = tuple(PolicyKind.parse(p) if isinstance(p, str) else p for p in self.policies)
        object.__setattr__(self, "policies", pol)
        object.__setattr__(self, "f_th", tuple(self.f_th))
        object.__setattr__(self, "budgets", tuple(self.budgets))
        object.__setattr__(self, "hops", tuple(self.hops) or (self.params.hops,))
        if not pol:
            raise ValueError("at least one policy is required")
        if len(set(pol)) != len(pol):
            raise ValueError("duplicate policies")
        if not self.f_th or not self.budgets:
            raise ValueError("sweep axes must be non-empty")
        if not isinstance(self.trials, int) or self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials!r}")
        if not 0 <= self.master_seed < 2**64:
            raise ValueError(f"master_seed must be an unsigned 64-bit integer, got {self.master_seed}")
        for h in self.hops:
            if not isinstance(h, int) or h < 1:
                raise ValueError(f"hop counts must be integers >= 1, got {h!r}")
        for f in self.f_th:
            if f is not None and not 0.5 < f <= 1.0:
                raise ValueError(f"f_th must lie in (0.5, 1], got {f}")
        for b in self.budgets:
            if b is not None and (not isinstance(b, int) or b < 1):
                raise ValueError(f"budgets must be integers >= 1, got {b!r}")
        if None in self.f_th and None in self.budgets:
            raise ValueError("every cell needs a fidelity threshold, a budget, or both")
        if PolicyKind.DELTA_PURIFY in pol and (any(b is not None for b in self.budgets) or None in self.f_th):
            raise ValueError("delta-purify only runs fidelity-constrained cells")

    def cells(self) -> list[Cell]:
        """Cells in a fixed order: hops, then f_th, then budget, then policy."""
        return [
            Cell(p, h, f, b)
            for h in self.hops
            for f in self.f_th
            for b in self.budgets
            for p in self.policies
        ]

    def replace(self, **changes) -> "ExperimentSpec":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(changes)
        return ExperimentSpec(**d)


def _fth_key(f: float | None) -> int:
    return 0 if f is None else round(f * 1e9)


def trial_rng(spec: ExperimentSpec, cell: Cell, trial: int) -> RngStream:
    """Stream for one trial. Policy label 0 is reserved for shared streams."""
    tag = 0 if spec.common_random_numbers else cell.policy.index + 1
    return RngStream(spec.master_seed, tag, cell.hops, _fth_key(cell.f_th), trial)


@dataclass
class MetricsSummary:
    """Per-cell summary. Quantiles are nearest-rank; see :func:`nearest_rank`.

    ``restricted_mean_time`` averages ``min(T, horizon)`` over all trials, so
    censored trials count as reaching the horizon. Every other time statistic
    covers delivered trials only and is ``None`` when nothing was delivered.
    """

    trials: int
    delivered: int
    censored: int
    eta: float
    censored_fraction: float
    time_mean: float | None = None
    time_median: float | None = None
    time_q1: float | None = None
    time_q3: float | None = None
    time_whisker_lo: float | None = None
    time_whisker_hi: float | None = None
    time_min: float | None = None
    time_max: float | None = None
    restricted_mean_time: float | None = None
    fidelity_mean: float | None = None
    fidelity_median: float | None = None
    fidelity_q1: float | None = None
    fidelity_q3: float | None = None
    gain_count: int = 0
    gain_positive_fraction: float | None = None
    gain_mean: float | None = None
    gain_quantiles: dict[str, float] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)


GAIN_QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def nearest_rank(sorted_values: Sequence[float], q: float):
    """Smallest sample value with at least a fraction ``q`` of the sample at or below it."""
    n = len(sorted_values)
    if n == 0:
        raise ValueError("quantile of an empty sample")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    return sorted_values[max(math.ceil(q * n), 1) - 1]


def _tukey_whiskers(xs: Sequence[float], q1: float, q3: float) -> tuple[float, float]:
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    lo = next(x for x in xs if x >= lo_fence)
    hi = next(x for x in reversed(xs) if x <= hi_fence)
    return lo, hi


def aggregate_metrics(outcomes: Iterable[TrialOutcome], horizon: int | None = None) -> MetricsSummary:
    """Summarise an ordered stream of trial outcomes.

    Sums use :func:`math.fsum`, so the result does not depend on reduction
    order. ``horizon`` enables ``restricted_mean_time``.
    """
    outcomes = list(outcomes)
    n = len(outcomes)
    if n == 0:
        raise ValueError("cannot summarise an empty trial stream")
    done = [o for o in outcomes if o.delivered]
    k = len(done)
    s = MetricsSummary(trials=n, delivered=k, censored=n - k, eta=k / n, censored_fraction=(n - k) / n)

    totals = Counters().as_dict()
    for o in outcomes:
        for name, v in o.counters.as_dict().items():
            totals[name] += v
    s.counters = totals

    if k:
        ts = sorted(o.t_deliver for o in done)
        s.time_mean = math.fsum(ts) / k
        s.time_median = nearest_rank(ts, 0.5)
        s.time_q1 = nearest_rank(ts, 0.25)
        s.time_q3 = nearest_rank(ts, 0.75)
        s.time_whisker_lo, s.time_whisker_hi = _tukey_whiskers(ts, s.time_q1, s.time_q3)
        s.time_min, s.time_max = ts[0], ts[-1]
        fs = sorted(o.f_deliver for o in done)
        s.fidelity_mean = math.fsum(fs) / k
        s.fidelity_median = nearest_rank(fs, 0.5)
        s.fidelity_q1 = nearest_rank(fs, 0.25)
        s.fidelity_q3 = nearest_rank(fs, 0.75)
    if horizon is not None:
        s.restricted_mean_time = math.fsum(min(o.t_deliver, horizon) if o.delivered else horizon for o in outcomes) / n

    gains = [g for o in outcomes for g in o.gain_samples]
    s.gain_count = len(gains)
    if gains:
        s.gain_positive_fraction = sum(g > 0 for g in gains) / len(gains)
        s.gain_mean = math.fsum(gains) / len(gains)
        gs = sorted(gains)
        s.gain_quantiles = {f"q{round(q * 100):02d}": nearest_rank(gs, q) for q in GAIN_QUANTILES}
    return s


@dataclass
class CellResult:
    cell: Cell
    outcomes: list[TrialOutcome]
    summary: MetricsSummary


def run_cell(spec: ExperimentSpec, cell: Cell, debug: bool = False, trials: range | None = None) -> CellResult:
    params = spec.params.replace(hops=cell.hops)
    stop = cell.stop()
    idx = range(spec.trials) if trials is None else trials
    outs = [run_policy(cell.policy, params, stop, trial_rng(spec, cell, i), debug) for i in idx]
    return CellResult(cell, outs, aggregate_metrics(outs, stop.horizon(params.cutoff)))


def run_experiment(spec: ExperimentSpec, debug: bool = False, progress=None) -> list[CellResult]:
    """Run every cell of ``spec`` in :meth:`ExperimentSpec.cells` order."""
    results = []
    for cell in spec.cells():
        results.append(run_cell(spec, cell, debug))
        if progress is not None:
            progress(results[-1])
    return results


def _require_mode(spec: ExperimentSpec, fidelity: bool, budget: bool, name: str) -> None:
    has_f = all(f is not None for f in spec.f_th)
    has_b = all(b is not None for b in spec.budgets)
    if (fidelity and not has_f) or (budget and not has_b) or (not fidelity and has_f) or (not budget and has_b):
        raise ValueError(f"{name}: wrong sweep axes for this objective")


def gain_distribution_experiment(
    spec: ExperimentSpec, memories: Sequence[MemoryModel] | None = None
) -> dict[str, CellResult]:
    """Pool SP purification gains per memory model.

    Each trial keeps purifying until the first success (time objective with
    the whole horizon as budget), so every completed attempt is scored.
    ``memories`` defaults to cmm, lmm and emm at the calibrated ``t_coh``.
    """
    if spec.policies != (PolicyKind.SWAP_PURIFY,):
        raise ValueError("the gain distribution experiment runs swap-purify only")
    if memories is None:
        memories = (cmm(), lmm(CALIBRATED_T_COH), emm(CALIBRATED_T_COH))
    out = {}
    for mem in memories:
        sub = spec.replace(params=spec.params.replace(memory=mem), f_th=(None,), budgets=(spec.params.cutoff,))
        cell = sub.cells()[0]
        out[str(mem)] = run_cell(sub, cell)
    return out


def objective1_run(spec: ExperimentSpec) -> list[CellResult]:
    """Time to serve under a fidelity threshold, per (policy, f_th)."""
    _require_mode(spec, True, False, "objective1_run")
    return run_experiment(spec)


def objective2_run(spec: ExperimentSpec) -> list[CellResult]:
    """Delivered fidelity and delivery rate under a time budget, per (policy, budget)."""
    _require_mode(spec, False, True, "objective2_run")
    return run_experiment(spec)


def objective3_sweep(spec: ExperimentSpec) -> list[CellResult]:
    """Delivery-rate grid over (f_th, budget) per policy."""
    _require_mode(spec, True, True, "objective3_sweep")
    return run_experiment(spec)


def scalability_sweep(spec: ExperimentSpec, budget: int = 20) -> dict[str, list[CellResult]]:
    """Objective-1 and objective-2 metrics over the hop axis.

    Returns ``{"time": ..., "fidelity": ...}``; the second runs every policy
    with the time budget ``budget`` and no fidelity threshold.
    """
    _require_mode(spec, True, False, "scalability_sweep")
    by_time = run_experiment(spec)
    pols = tuple(p for p in spec.policies if p is not PolicyKind.DELTA_PURIFY)
    by_fid = run_experiment(spec.replace(policies=pols, f_th=(None,), budgets=(budget,)))
    return {"time": by_time, "fidelity": by_fid}


def delta_purify_eval(spec: ExperimentSpec) -> list[CellResult]:
    """Time to serve for DeltaPurify against its baselines.

    Abort counters are part of each cell's summary.
    """
    _require_mode(spec, True, False, "delta_purify_eval")
    if PolicyKind.DELTA_PURIFY not in spec.policies:
        raise ValueError("delta_purify_eval needs delta-purify among the policies")
    return run_experiment(spec)


@dataclass
class CalibrationRow:
    t_coh: float
    emm_fraction: float
    emm_mean: float
    lmm_fraction: float
    lmm_mean: float


def calibrate_t_coh(
    params: ChainParams | None = None,
    t_coh_values: Sequence[float] = (20, 30, 40, 50, 55, 60, 70, 80, 100, 150, 200),
    trials: int = 2_000,
    master_seed: int = 0,
    target: float = EMM_TARGET_FRACTION,
) -> tuple[list[CalibrationRow], CalibrationRow]:
    """Sweep ``t_coh`` and report SP's positive-gain fraction under emm and lmm.

    Returns all rows and the row whose emm fraction is closest to ``target``.
    """
    params = params or ChainParams()
    base = ExperimentSpec((PolicyKind.SWAP_PURIFY,), params, budgets=(params.cutoff,), trials=trials, master_seed=master_seed)
    rows = []
    for t in t_coh_values:
        res = gain_distribution_experiment(base, (emm(t), lmm(t)))
        e, l = (res[str(m)].summary for m in (emm(t), lmm(t)))
        rows.append(CalibrationRow(float(t), e.gain_positive_fraction, e.gain_mean, l.gain_positive_fraction, l.gain_mean))
    best = min(rows, key=lambda r: (abs(r.emm_fraction - target), r.t_coh))
    return rows, best


def _memory_dict(m: MemoryModel) -> dict:
    return {"kind": m.kind, "t_coh": m.t_coh, "cutoff_tau": m.cutoff_tau}


def _params_dict(p: ChainParams) -> dict:
    return {
        "hops": p.hops,
        "link_f0": list(p.link_f0),
        "p_e": p.p_e,
        "p_s": p.p_s,
        "memory": _memory_dict(p.memory),
        "cutoff": p.cutoff,
        "generation_mode": p.generation_mode,
        "seed": p.seed,
        "discard_below": p.discard_below,
    }


def manifest(spec: ExperimentSpec, **extra) -> dict:
    """JSON-ready record of the fully resolved spec."""
    d = {
        "policies": [p.value for p in spec.policies],
        "params": _params_dict(spec.params),
        "f_th": list(spec.f_th),
        "budgets": list(spec.budgets),
        "hops": list(spec.hops),
        "trials": spec.trials,
        "master_seed": spec.master_seed,
        "common_random_numbers": spec.common_random_numbers,
    }
    d.update(extra)
    return d


def spec_from_manifest(d: dict) -> ExperimentSpec:
    p = dict(d["params"])
    p["memory"] = MemoryModel(**p["memory"])
    p["link_f0"] = tuple(p["link_f0"])
    return ExperimentSpec(
        policies=tuple(PolicyKind.parse(x) for x in d["policies"]),
        params=ChainParams(**p),
        f_th=tuple(d["f_th"]),
        budgets=tuple(d["budgets"]),
        hops=tuple(d["hops"]),
        trials=d["trials"],
        master_seed=d["master_seed"],
        common_random_numbers=d["common_random_numbers"],
    )
