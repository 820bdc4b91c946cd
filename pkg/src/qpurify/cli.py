"""Command-line front end.

Subcommands
-----------
analyze     δ table, gain grid and δ_max from the closed-form calculus
simulate    one policy in one cell; per-trial CSV and a summary
sweep       every cell of a grid; one heatmap row per cell
compare     two or more policies on the same cells, with pairwise differences
calibrate   sweep t_coh and report swap-purify's positive-gain fraction

Configuration
-------------
Settings come from built-in defaults, then an INI file given with
``--config``, then command-line flags; later sources win. Recognised keys::

    [chain]       hops, f0, pe, ps, cutoff, generation_mode, discard_below
    [memory]      kind, t_coh, cutoff_tau
    [experiment]  policies, f_th, budget, trials, seed, common_random_numbers
    [calibrate]   t_coh_values
    [analyze]     grid_res
    [output]      dir, debug_events

``hops``, ``policies``, ``f_th``, ``budget`` and ``t_coh_values`` take
comma-separated lists; ``none`` disables a threshold or budget. Unknown
sections or keys are rejected.

Outputs
-------
CSV files are comma-separated with a header row and LF line endings. Floats
are written as their shortest round-trip decimal and missing values as empty
fields. Every output directory gets a ``manifest.json`` holding the resolved
configuration; passing it back with ``--config`` reruns the same experiment.

``--debug-events`` (simulate only) adds ``events.csv`` with columns
``trial_index, t, kind, left, right, fidelity, t_out``: one row per herald,
swap, purification, abort or delivery, in simulation order.

Exit codes: 0 success, 2 configuration error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import sys
from pathlib import Path

from .calculus import (
    DeltaRole,
    chain_fidelity_limit,
    delta_tolerance,
    f1_max,
    f2_min,
    find_delta_max,
    gain_grid,
    grid_axis,
)
from .chain import ChainParams, Counters
from .experiments import (
    CALIBRATED_T_COH,
    ExperimentSpec,
    calibrate_t_coh,
    manifest,
    run_cell,
    run_experiment,
)
from .memory import MemoryModel
from .policies import PolicyKind

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3


class ConfigError(ValueError):
    pass


def _none_or(conv):
    def parse(s: str):
        return None if s.strip().lower() in ("none", "") else conv(s)

    return parse


def _list(conv):
    def parse(s: str):
        items = [x.strip() for x in s.split(",")]
        if not all(items):
            raise ValueError(f"empty item in list {s!r}")
        return tuple(conv(x) for x in items)

    return parse


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _u64(s: str) -> int:
    v = int(s)
    if not 0 <= v < 2**64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {v}")
    return v


SCHEMA = {
    "chain": {
        "hops": _list(int),
        "f0": float,
        "pe": float,
        "ps": float,
        "cutoff": int,
        "generation_mode": str,
        "discard_below": _none_or(float),
    },
    "memory": {"kind": str, "t_coh": _none_or(float), "cutoff_tau": _none_or(float)},
    "experiment": {
        "policies": _list(PolicyKind.parse),
        "f_th": _list(_none_or(float)),
        "budget": _list(_none_or(int)),
        "trials": int,
        "seed": _u64,
        "common_random_numbers": _bool,
    },
    "calibrate": {"t_coh_values": _list(float)},
    "analyze": {"grid_res": int},
    "output": {"dir": str, "debug_events": _bool},
}

DEFAULTS = {
    "chain.hops": "2",
    "chain.f0": "0.99",
    "chain.pe": "0.1",
    "chain.ps": "0.9",
    "chain.cutoff": "10000",
    "chain.generation_mode": "sequential",
    "chain.discard_below": "none",
    "memory.kind": "emm",
    "memory.t_coh": "100",
    "memory.cutoff_tau": "none",
    "experiment.policies": "no-pur",
    "experiment.f_th": "0.9",
    "experiment.budget": "none",
    "experiment.trials": "1000",
    "experiment.seed": "0",
    "experiment.common_random_numbers": "false",
    "calibrate.t_coh_values": "20,30,40,50,55,60,70,80,100,150,200",
    "analyze.grid_res": "201",
    "output.dir": "out",
    "output.debug_events": "false",
}

# command-line flag -> config key
FLAG_KEYS = {
    "hops": "chain.hops",
    "f0": "chain.f0",
    "pe": "chain.pe",
    "ps": "chain.ps",
    "cutoff": "chain.cutoff",
    "memory": "memory.kind",
    "t_coh": "memory.t_coh",
    "policy": "experiment.policies",
    "f_th": "experiment.f_th",
    "budget": "experiment.budget",
    "trials": "experiment.trials",
    "seed": "experiment.seed",
    "out": "output.dir",
    "grid_res": "analyze.grid_res",
}


def _unparse(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, list):
        return ",".join(_unparse(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def load_config(path: str | None, flags: dict[str, str | None]) -> dict[str, object]:
    """Merge defaults, the INI file and flags, then parse every value.

    Raises :class:`ConfigError` listing every offending key.
    """
    raw = dict(DEFAULTS)
    problems = []
    if path is not None and path.endswith(".json"):
        try:
            with open(path, encoding="utf-8") as fh:
                record = json.load(fh)["config"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path} is not a run manifest: {exc}") from None
        for dotted, value in record.items():
            section, _, key = dotted.partition(".")
            if key not in SCHEMA.get(section, {}):
                problems.append(f"{dotted}: unknown key")
            else:
                raw[dotted] = _unparse(value)
    elif path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        for section in cp.sections():
            if section not in SCHEMA:
                problems.append(f"[{section}]: unknown section")
                continue
            for key, value in cp.items(section):
                if key not in SCHEMA[section]:
                    problems.append(f"{section}.{key}: unknown key")
                else:
                    raw[f"{section}.{key}"] = value
    for name, value in flags.items():
        if value is not None:
            raw[FLAG_KEYS.get(name, name)] = value
    resolved = {}
    for dotted, value in raw.items():
        section, key = dotted.split(".")
        try:
            resolved[dotted] = SCHEMA[section][key](value)
        except ValueError as exc:
            problems.append(f"{dotted}={value!r}: {exc}")
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
    return resolved


def build_spec(cfg: dict[str, object]) -> ExperimentSpec:
    """Validate the resolved configuration against the model invariants."""
    problems = []
    memory = params = None
    try:
        memory = MemoryModel(cfg["memory.kind"], cfg["memory.t_coh"] if cfg["memory.kind"] != "cmm" else None,
                             cfg["memory.cutoff_tau"])
    except ValueError as exc:
        problems.append(f"memory: {exc}")
    hops = cfg["chain.hops"]
    if memory is not None:
        try:
            params = ChainParams(
                hops=hops[0],
                link_f0=cfg["chain.f0"],
                p_e=cfg["chain.pe"],
                p_s=cfg["chain.ps"],
                memory=memory,
                cutoff=cfg["chain.cutoff"],
                generation_mode=cfg["chain.generation_mode"],
                seed=cfg["experiment.seed"],
                discard_below=cfg["chain.discard_below"],
            )
        except ValueError as exc:
            problems.append(f"chain: {exc}")
    if params is not None:
        try:
            return ExperimentSpec(
                policies=cfg["experiment.policies"],
                params=params,
                f_th=cfg["experiment.f_th"],
                budgets=cfg["experiment.budget"],
                hops=hops,
                trials=cfg["experiment.trials"],
                master_seed=cfg["experiment.seed"],
                common_random_numbers=cfg["experiment.common_random_numbers"],
            )
        except ValueError as exc:
            problems.append(f"experiment: {exc}")
    raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, PolicyKind):
        return v.value
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _config_record(cfg: dict[str, object]) -> dict:
    out = {}
    for dotted, v in sorted(cfg.items()):
        if isinstance(v, tuple):
            v = [x.value if isinstance(x, PolicyKind) else x for x in v]
        out[dotted] = v
    return out


def _out_dir(cfg) -> Path:
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_analyze(cfg) -> None:
    res = cfg["analyze.grid_res"]
    if res < 2:
        raise ConfigError(f"analyze.grid_res must be >= 2, got {res}")
    out = _out_dir(cfg)
    rows = []
    for k in range(501, 1001):
        f = k / 1000
        rows.append((f, delta_tolerance(f), delta_tolerance(f, DeltaRole.AS_INFERIOR), f2_min(f), f1_max(f)))
    write_csv(out / "delta-table.csv", ["f", "delta_superior", "delta_inferior", "f2_min", "f1_max"], rows)
    axis = grid_axis(res).tolist()
    grid = gain_grid(res).tolist()
    write_csv(
        out / "gain-grid.csv",
        ["f1", "f2", "gain"],
        ((axis[i], axis[j], grid[i][j]) for i in range(res) for j in range(res)),
    )
    dm = find_delta_max()
    write_json(out / "delta-max.json", {"f1_star": dm.f1_star, "f2_star": dm.f2_star, "delta_max": dm.delta_max})
    write_json(out / "manifest.json", {"command": "analyze", "grid_res": res})


COUNTER_NAMES = list(Counters().as_dict())


def _single(spec: ExperimentSpec) -> None:
    if len(spec.cells()) != 1:
        raise ConfigError("simulate runs a single cell: give one policy, hop count, f_th and budget")


def cmd_simulate(cfg) -> None:
    spec = build_spec(cfg)
    _single(spec)
    debug = cfg["output.debug_events"]
    out = _out_dir(cfg)
    cell = spec.cells()[0]
    res = run_cell(spec, cell, debug=debug)
    write_csv(
        out / "trials.csv",
        ["trial_index", "delivered", "t_deliver", "f_deliver", *COUNTER_NAMES],
        ((i, o.delivered, o.t_deliver, o.f_deliver, *o.counters.as_dict().values()) for i, o in enumerate(res.outcomes)),
    )
    write_csv(
        out / "gains.csv",
        ["trial_index", "attempt", "gain"],
        ((i, k, g) for i, o in enumerate(res.outcomes) for k, g in enumerate(o.gain_samples)),
    )
    if debug:
        write_csv(
            out / "events.csv",
            ["trial_index", "t", "kind", "left", "right", "fidelity", "t_out"],
            ((i, e.t, e.kind, e.left, e.right, e.fidelity, e.t_out) for i, o in enumerate(res.outcomes) for e in o.events),
        )
    params = spec.params.replace(hops=cell.hops)
    summary = {
        "policy": cell.policy.value,
        "hops": cell.hops,
        "f_th": cell.f_th,
        "budget_n": cell.budget,
        "horizon": cell.stop().horizon(params.cutoff),
        "f_lim": chain_fidelity_limit(params.link_f0),
        **res.summary.as_dict(),
    }
    write_json(out / "summary.json", summary)
    write_json(out / "manifest.json", manifest(spec, command="simulate", config=_config_record(cfg)))


HEATMAP_COLUMNS = ["policy", "f_th", "budget_n", "hops", "eta", "mean_time", "mean_fidelity", "censored_fraction"]


def cmd_sweep(cfg) -> None:
    spec = build_spec(cfg)
    out = _out_dir(cfg)
    results = run_experiment(spec)
    write_csv(
        out / "heatmap.csv",
        HEATMAP_COLUMNS,
        ((r.cell.policy, r.cell.f_th, r.cell.budget, r.cell.hops, r.summary.eta, r.summary.time_mean,
          r.summary.fidelity_mean, r.summary.censored_fraction) for r in results),
    )
    write_json(out / "manifest.json", manifest(spec, command="sweep", config=_config_record(cfg)))


COMPARE_COLUMNS = [
    "hops", "f_th", "budget_n", "policy", "eta", "censored_fraction", "mean_time", "median_time",
    "restricted_mean_time", "mean_fidelity", "median_fidelity", "delta_aborts", "feasibility_aborts",
]


def _diff(a, b):
    return None if a is None or b is None else a - b


def cmd_compare(cfg) -> None:
    spec = build_spec(cfg)
    if len(spec.policies) < 2:
        raise ConfigError("compare needs at least two policies")
    out = _out_dir(cfg)
    results = run_experiment(spec)
    rows, diffs = [], []
    groups: dict[tuple, list] = {}
    for r in results:
        c, s = r.cell, r.summary
        rows.append((c.hops, c.f_th, c.budget, c.policy, s.eta, s.censored_fraction, s.time_mean, s.time_median,
                     s.restricted_mean_time, s.fidelity_mean, s.fidelity_median, s.counters["delta_aborts"],
                     s.counters["feasibility_aborts"]))
        groups.setdefault((c.hops, c.f_th, c.budget), []).append(r)
    for key, rs in groups.items():
        for i, a in enumerate(rs):
            for b in rs[i + 1:]:
                diffs.append((*key, a.cell.policy, b.cell.policy,
                              _diff(a.summary.time_mean, b.summary.time_mean),
                              _diff(a.summary.restricted_mean_time, b.summary.restricted_mean_time),
                              _diff(a.summary.fidelity_mean, b.summary.fidelity_mean)))
    write_csv(out / "compare.csv", COMPARE_COLUMNS, rows)
    write_csv(
        out / "differences.csv",
        ["hops", "f_th", "budget_n", "policy_a", "policy_b", "mean_time_diff", "restricted_mean_time_diff",
         "mean_fidelity_diff"],
        diffs,
    )
    write_json(out / "manifest.json", manifest(spec, command="compare", config=_config_record(cfg)))


def cmd_calibrate(cfg, t_coh_flag: str | None) -> None:
    values = cfg["calibrate.t_coh_values"]
    if t_coh_flag is not None:
        try:
            values = _list(float)(t_coh_flag)
        except ValueError as exc:
            raise ConfigError(f"--t-coh: {exc}") from None
    if any(v <= 0 for v in values):
        raise ConfigError("calibration t_coh values must be > 0")
    spec = build_spec({**cfg, "experiment.policies": (PolicyKind.SWAP_PURIFY,), "experiment.f_th": (0.9,),
                       "experiment.budget": (None,)})
    out = _out_dir(cfg)
    rows, best = calibrate_t_coh(spec.params, values, spec.trials, spec.master_seed)
    write_csv(
        out / "calibration.csv",
        ["t_coh", "emm_fraction", "emm_mean", "lmm_fraction", "lmm_mean"],
        ((r.t_coh, r.emm_fraction, r.emm_mean, r.lmm_fraction, r.lmm_mean) for r in rows),
    )
    write_json(out / "calibration.json", {
        "t_coh": best.t_coh,
        "emm_fraction": best.emm_fraction,
        "lmm_fraction": best.lmm_fraction,
        "lmm_exceeds_emm": best.lmm_fraction > best.emm_fraction,
        "builtin_t_coh": CALIBRATED_T_COH,
    })
    cfg_rec = _config_record({**cfg, "calibrate.t_coh_values": tuple(values)})
    write_json(out / "manifest.json", {"command": "calibrate", "config": cfg_rec})


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI configuration file")
    common.add_argument("--seed", help="master seed (unsigned 64-bit)")
    common.add_argument("--trials", help="trials per cell")
    common.add_argument("--hops", help="hop count, or a comma-separated list")
    common.add_argument("--policy", help="policy name, or a comma-separated list")
    common.add_argument("--memory", help="memory model: cmm, lmm or emm")
    common.add_argument("--t-coh", help="coherence time; calibrate takes a comma-separated list")
    common.add_argument("--f0", help="elementary link fidelity")
    common.add_argument("--pe", help="generation success probability per timestep")
    common.add_argument("--ps", help="swap success probability")
    common.add_argument("--f-th", help="fidelity threshold(s), 'none' for no threshold")
    common.add_argument("--budget", help="time budget(s) in timesteps, 'none' for no budget")
    common.add_argument("--cutoff", help="trial horizon in timesteps (default 10000)")
    common.add_argument("--out", help="output directory (default ./out)")
    common.add_argument("--grid-res", help="gain-grid resolution (default 201)")
    common.add_argument("--debug-events", action="store_true", help="write the per-trial event log")

    parser = argparse.ArgumentParser(prog="qpurify", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("analyze", "closed-form tables"),
        ("simulate", "run one policy in one cell"),
        ("sweep", "run a grid of cells"),
        ("compare", "compare two or more policies"),
        ("calibrate", "sweep t_coh for the gain-fraction calibration"),
    ]:
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    flags = {name: getattr(args, name) for name in FLAG_KEYS}
    t_coh_flag = None
    if args.command == "calibrate":
        t_coh_flag, flags["t_coh"] = flags["t_coh"], None
    if args.debug_events:
        flags["output.debug_events"] = "true"
    try:
        cfg = load_config(args.config, flags)
        if args.command == "analyze":
            cmd_analyze(cfg)
        elif args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "sweep":
            cmd_sweep(cfg)
        elif args.command == "compare":
            cmd_compare(cfg)
        else:
            cmd_calibrate(cfg, t_coh_flag)
    except ConfigError as exc:
        print(f"qpurify: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"qpurify: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
