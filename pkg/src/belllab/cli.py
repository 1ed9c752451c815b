"""Command-line front end: simulate, analyze, sweep, feasibility.

Every command is a pure function of (config file, flags): identical inputs
produce byte-identical output files, for any BELLLAB_THREADS value. Configs
are JSON with a documented schema, validated before any computation; the
seed is mandatory (``--seed`` overrides the config) and is echoed, together
with the resolved config, into every metadata output.

Exit codes: 0 success, 2 input/config error, 3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from . import io as bio
from .analysis import (
    AnalysisError,
    HypothesisReport,
    chsh_combinations,
    coupling_feasibility,
    lhv_pvalue,
    nosignalling_test,
    theta_sweep,
)
from .core import (
    CONTEXTS,
    AngleAssignment,
    ContextTable,
    chsh,
    estimate,
)
from .couplings import (
    ContextualModel,
    CouplingModel,
    DeterministicLHVModel,
    PostSelectionModel,
    QuantumSingletModel,
    StochasticLHVModel,
    disjoint_support_model,
    pearle_model,
    rejection_curve,
)
from .errors import BellLabError, ConfigError
from .pipeline import CoincidencePolicy, match_coincidences, postselect, window_sweep
from .protocol import (
    EventReadyConfig,
    SourceProtocolConfig,
    run_event_ready,
    run_source_experiment,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTERNAL = 3

_MISSING = object()


# --- config plumbing --------------------------------------------------------


def load_config(path: Path) -> dict:
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(str(path), f"cannot read config: {e}") from e
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), f"line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(cfg, dict):
        raise ConfigError(str(path), "top-level config must be a JSON object")
    return cfg


def _get(obj: dict, key: str, path: str, default=_MISSING):
    if not isinstance(obj, dict):
        raise ConfigError(path or key, f"must be an object, got {obj!r}")
    if key in obj:
        return obj[key]
    if default is _MISSING:
        raise ConfigError(f"{path}.{key}", "missing required field")
    return default


def _number(obj: dict, key: str, path: str, *, lo=None, hi=None, default=_MISSING) -> float:
    if not isinstance(obj, dict):
        raise ConfigError(path, f"must be an object, got {obj!r}")
    if key not in obj:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}", "missing required field")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key}", f"must be a number, got {value!r}")
    v = float(value)
    if not math.isfinite(v):
        raise ConfigError(f"{path}.{key}", "must be finite")
    if lo is not None and v < lo or hi is not None and v > hi:
        raise ConfigError(f"{path}.{key}", f"must be in [{lo}, {hi}], got {value!r}")
    return v


def _integer(obj: dict, key: str, path: str, *, lo=None, default=_MISSING) -> int:
    if not isinstance(obj, dict):
        raise ConfigError(path, f"must be an object, got {obj!r}")
    if key not in obj:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}", "missing required field")
        return default
    value = obj[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}.{key}", f"must be an integer, got {value!r}")
    if lo is not None and value < lo:
        raise ConfigError(f"{path}.{key}", f"must be >= {lo}, got {value}")
    return int(value)


def _choice(obj: dict, key: str, path: str, choices: tuple[str, ...], default=_MISSING) -> str:
    value = _get(obj, key, path, default)
    if value not in choices:
        raise ConfigError(f"{path}.{key}", f"must be one of {choices}, got {value!r}")
    return value


def _pair(obj: dict, key: str, path: str, default=_MISSING) -> tuple[float, float]:
    if not isinstance(obj, dict):
        raise ConfigError(path, f"must be an object, got {obj!r}")
    if key not in obj:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}", "missing required field")
        return default
    value = obj[key]
    if not isinstance(value, list) or len(value) != 2:
        raise ConfigError(f"{path}.{key}", "must be a 2-element array")
    return (float(value[0]), float(value[1]))


def _angles(obj: dict, path: str) -> AngleAssignment:
    spec = _get(obj, "angles", path)
    if not isinstance(spec, dict):
        raise ConfigError(f"{path}.angles", "must be an object with alice/bob arrays")
    try:
        return AngleAssignment(
            alice=_pair(spec, "alice", f"{path}.angles"),
            bob=_pair(spec, "bob", f"{path}.angles"),
        )
    except ValueError as e:
        raise ConfigError(f"{path}.angles", str(e)) from e


def _array(obj: dict, key: str, path: str) -> np.ndarray:
    value = _get(obj, key, path)
    try:
        return np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}.{key}", f"must be a numeric array: {e}") from e


def _rejection(obj: dict, path: str) -> Callable[[np.ndarray], np.ndarray]:
    spec = _get(obj, "rejection", path, default=None)
    if spec is None:
        return rejection_curve("linear", max_reject=0.8)
    kind = _choice(spec, "kind", f"{path}.rejection", ("linear", "power"))
    max_reject = _number(spec, "max_reject", f"{path}.rejection", lo=0.0, hi=1.0, default=0.8)
    exponent = _number(spec, "exponent", f"{path}.rejection", lo=0.0, default=1.0)
    try:
        return rejection_curve(kind, max_reject=max_reject, exponent=exponent)
    except ValueError as e:
        raise ConfigError(f"{path}.rejection", str(e)) from e


MODEL_FAMILIES = (
    "quantum_singlet",
    "deterministic_lhv",
    "stochastic_lhv",
    "contextual",
    "post_selection",
    "pearle",
    "disjoint_support",
)


def build_model(spec: dict, path: str) -> CouplingModel:
    """Construct a coupling model from its JSON description."""
    family = _choice(spec, "family", path, MODEL_FAMILIES)
    try:
        if family == "quantum_singlet":
            return QuantumSingletModel(
                angles=_angles(spec, path),
                visibility=_number(spec, "visibility", path, lo=0.0, hi=1.0, default=1.0),
            )
        if family == "deterministic_lhv":
            return DeterministicLHVModel(
                weights=_array(spec, "weights", path),
                alice=_array(spec, "alice", path),
                bob=_array(spec, "bob", path),
            )
        if family == "stochastic_lhv":
            return StochasticLHVModel(
                weights=_array(spec, "weights", path),
                alice_plus=_array(spec, "alice_plus", path),
                bob_plus=_array(spec, "bob_plus", path),
            )
        if family == "contextual":
            tables = _get(spec, "instrument_weights", path)
            if not isinstance(tables, dict):
                raise ConfigError(
                    f"{path}.instrument_weights", 'must map context keys "00".."11" to tables'
                )
            first = np.asarray(_get(tables, "00", f"{path}.instrument_weights"), dtype=np.float64)
            iw = np.zeros((2, 2) + first.shape)
            for s in CONTEXTS:
                iw[s.x, s.y] = np.asarray(
                    _get(tables, s.key(), f"{path}.instrument_weights"), dtype=np.float64
                )
            return ContextualModel(
                source_weights=_array(spec, "source_weights", path),
                instrument_weights=iw,
                alice=_array(spec, "alice", path),
                bob=_array(spec, "bob", path),
            )
        if family == "post_selection":
            return PostSelectionModel(
                source_weights=_array(spec, "source_weights", path),
                alice_instrument=_array(spec, "alice_instrument", path),
                bob_instrument=_array(spec, "bob_instrument", path),
                alice=_array(spec, "alice", path),
                bob=_array(spec, "bob", path),
            )
        if family == "pearle":
            return pearle_model(
                angles=_angles(spec, path),
                rejection=_rejection(spec, path),
                bins=_integer(spec, "bins", path, lo=2, default=720),
                threshold_bins=_integer(spec, "threshold_bins", path, lo=1, default=64),
            )
        return disjoint_support_model()
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(path, str(e)) from e


def _theta_factory(spec: dict, path: str) -> Callable[[float], CouplingModel]:
    """Model factory for theta sweeps: theta is the relative angle at (0, 0)."""
    family = _choice(spec, "family", path, MODEL_FAMILIES)
    if family == "quantum_singlet":
        visibility = _number(spec, "visibility", path, lo=0.0, hi=1.0, default=1.0)
        return lambda theta: QuantumSingletModel(
            angles=AngleAssignment(alice=(theta, 0.0), bob=(0.0, 0.0)),
            visibility=visibility,
        )
    if family == "pearle":
        rejection = _rejection(spec, path)
        bins = _integer(spec, "bins", path, lo=2, default=720)
        threshold_bins = _integer(spec, "threshold_bins", path, lo=1, default=64)
        return lambda theta: pearle_model(
            angles=AngleAssignment(alice=(theta, 0.0), bob=(0.0, 0.0)),
            rejection=rejection,
            bins=bins,
            threshold_bins=threshold_bins,
        )
    raise ConfigError(f"{path}.family", f"theta sweeps need an angle-parameterized family, got {family!r}")


def _resolve_seed(args, cfg: dict, *, required: bool = True) -> int:
    if args.seed is not None:
        return int(args.seed)
    if "seed" in cfg:
        seed = cfg["seed"]
        if isinstance(seed, bool) or not isinstance(seed, int):
            raise ConfigError("seed", f"must be an integer, got {seed!r}")
        return seed
    if required:
        raise ConfigError("seed", "missing required field (set it in the config or pass --seed)")
    return 0


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text)
    print(f"wrote {path}")


def _metadata(command: str, seed: int, cfg: dict, counts: dict, warnings: list[str]) -> dict:
    return {
        "schema_version": bio.SCHEMA_VERSION,
        "belllab_version": __version__,
        "command": command,
        "seed": seed,
        "config": cfg,
        "counts": counts,
        "warnings": warnings,
    }


# --- commands ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = load_config(Path(args.config))
    seed = _resolve_seed(args, cfg)
    cfg = {**cfg, "seed": seed}
    out = _out_dir(args)
    proto = _get(cfg, "protocol", "")
    if not isinstance(proto, dict):
        raise ConfigError("protocol", "must be an object")
    kind = _choice(proto, "kind", "protocol", ("event_ready", "source"))

    if kind == "event_ready":
        ev = EventReadyConfig(
            herald_prob=_number(proto, "herald_prob", "protocol", lo=0.0, hi=1.0),
            visibility=_number(proto, "visibility", "protocol", lo=0.0, hi=1.0, default=1.0),
            fidelity_a=_number(proto, "fidelity_a", "protocol", lo=0.5, hi=1.0, default=1.0),
            fidelity_b=_number(proto, "fidelity_b", "protocol", lo=0.5, hi=1.0, default=1.0),
        )
        angles = _angles(proto, "protocol")
        n_trials = _integer(proto, "n_trials", "protocol", lo=1)
        run = run_event_ready(ev, angles, n_trials, seed)
        bio.write_trials_csv(out / "trials.csv", run, seed)
        print(f"wrote {out / 'trials.csv'}")
        meta = _metadata("simulate", seed, cfg, run.metadata, [])
        _write(out / "metadata.json", bio.dump_json(meta))
        return EXIT_OK

    delays = _get(proto, "setting_delay", "protocol", default={}) or {}
    odelays = _get(proto, "outcome_delay", "protocol", default={}) or {}
    src = SourceProtocolConfig(
        pair_rate=_number(proto, "pair_rate", "protocol", lo=0.0),
        duration=_number(proto, "duration", "protocol"),
        jitter_sd=_number(proto, "jitter_sd", "protocol", lo=0.0, default=0.0),
        dark_rate=_number(proto, "dark_rate", "protocol", lo=0.0, default=0.0),
        setting_delay_a=_pair(delays, "alice", "protocol.setting_delay", default=(0.0, 0.0)),
        setting_delay_b=_pair(delays, "bob", "protocol.setting_delay", default=(0.0, 0.0)),
        outcome_delay_a=_pair(odelays, "alice", "protocol.outcome_delay", default=(0.0, 0.0)),
        outcome_delay_b=_pair(odelays, "bob", "protocol.outcome_delay", default=(0.0, 0.0)),
    )
    model = build_model(_get(cfg, "model", ""), "model")
    run = run_source_experiment(src, model, seed)
    bio.write_timetags_csv(out / "timetags_a.csv", run.stream_a, seed)
    bio.write_timetags_csv(out / "timetags_b.csv", run.stream_b, seed)
    bio.write_pairs_csv(out / "raw_pairs.csv", run.truth, seed)
    for name in ("timetags_a.csv", "timetags_b.csv", "raw_pairs.csv"):
        print(f"wrote {out / name}")
    counts = dict(run.metadata)
    warnings = counts.pop("warnings", [])
    meta = _metadata("simulate", seed, cfg, counts, warnings)
    _write(out / "metadata.json", bio.dump_json(meta))
    return EXIT_OK


def _orient_positive(table: ContextTable) -> ContextTable:
    """Relabel Alice's outcome channels (+1 <-> -1), flipping the sign of S."""
    return ContextTable(table.counts[:, :, [1, 0, 2], :])


def _hypothesis_blocks(final_table: ContextTable, warnings: list[str]) -> tuple[dict | None, dict | None]:
    summary = estimate(final_table)
    try:
        primary = lhv_pvalue(summary).to_json()
    except AnalysisError as e:
        warnings.append(f"hypothesis test skipped: {e}")
        return None, None
    s = chsh(summary)
    oriented = estimate(_orient_positive(final_table)) if (s is not None and s < 0) else summary
    rep = lhv_pvalue(oriented)
    # The orientation is chosen after seeing the data: union bound over the
    # two outcome relabellings keeps the tail bound valid.
    two_sided = HypothesisReport(
        s_hat=rep.s_hat,
        n=rep.n,
        p_value=min(1.0, 2.0 * rep.p_value),
        method="hoeffding-two-sided",
    )
    return primary, two_sided.to_json()


def cmd_analyze(args) -> int:
    cfg = load_config(Path(args.config))
    seed = _resolve_seed(args, cfg)
    cfg = {**cfg, "seed": seed}
    out = _out_dir(args)
    inputs = _get(cfg, "inputs", "")
    if not isinstance(inputs, dict):
        raise ConfigError("inputs", "must be an object")
    warnings: list[str] = []
    window_block = None

    if "trials" in inputs:
        x, y, a, b = bio.read_trials_csv(Path(inputs["trials"]))
        raw_table = ContextTable.from_arrays(x, y, a, b)
        nonzero = (a.astype(np.int16) * b.astype(np.int16)) != 0
        final_table = ContextTable.from_arrays(x[nonzero], y[nonzero], a[nonzero], b[nonzero])
    elif "timetags_a" in inputs or "timetags_b" in inputs:
        stream_a = bio.read_timetags_csv(Path(_get(inputs, "timetags_a", "inputs")))
        stream_b = bio.read_timetags_csv(Path(_get(inputs, "timetags_b", "inputs")))
        wspec = _get(inputs, "window", "inputs")
        policy = CoincidencePolicy(
            window_ns=_integer(wspec, "width_ns", "inputs.window", lo=1),
            strategy=_choice(wspec, "strategy", "inputs.window", ("lattice", "greedy"), default="lattice"),
        )
        pairs = match_coincidences(stream_a, stream_b, policy)
        final, c_table = postselect(pairs)
        final_table = final.to_context_table()
        window_block = {
            "c_by_context": {s.key(): c_table[s] for s in CONTEXTS},
            "pairing": final.meta,
        }
        if "raw_pairs" in inputs:
            raw_table = bio.read_pairs_csv(Path(inputs["raw_pairs"])).to_context_table()
        else:
            raw_table = None
            warnings.append(
                "no raw_pairs input: raw no-signalling block computed from windowed data"
            )
    else:
        raise ConfigError("inputs", 'must contain "trials" or "timetags_a"/"timetags_b"')

    summary = estimate(final_table)
    s = chsh(summary)
    if s is None:
        starved = [k.key() for k in CONTEXTS if summary[k].e_ab is None]
        warnings.append(f"starved contexts (undefined expectations): {starved}")
    hypothesis, hypothesis_abs = _hypothesis_blocks(final_table, warnings)
    ns = nosignalling_test(raw_table if raw_table is not None else final_table, final_table)
    ns_json = ns.to_json()
    if raw_table is None:
        ns_json["raw_from_truth_record"] = False

    report = {
        "schema_version": bio.SCHEMA_VERSION,
        "belllab_version": __version__,
        "command": "analyze",
        "seed": seed,
        "config": cfg,
        "summary": summary.to_json(),
        "chsh": s,
        "chsh_abs": None if s is None else abs(s),
        "hypothesis": hypothesis,
        "hypothesis_abs": hypothesis_abs,
        "no_signalling": ns_json,
        "raw_table": raw_table.to_json() if raw_table is not None else None,
        "final_table": final_table.to_json(),
        "window": window_block,
        "warnings": warnings,
    }
    _write(out / "report.json", bio.dump_json(report))
    if args.format == "csv":
        header = f"# belllab schema_version={bio.SCHEMA_VERSION} kind=summary seed={seed}"
        lines = [header, "context,e_ab,e_a,e_b,c,n_pairs,n_total"]
        for k in CONTEXTS:
            est = summary[k]
            cells = [
                k.key(),
                "" if est.e_ab is None else repr(est.e_ab),
                "" if est.e_a is None else repr(est.e_a),
                "" if est.e_b is None else repr(est.e_b),
                "" if est.c is None else repr(est.c),
                str(est.n_pairs),
                str(est.n_total),
            ]
            lines.append(",".join(cells))
        _write(out / "summary.csv", "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(Path(args.config))
    seed = _resolve_seed(args, cfg)
    cfg = {**cfg, "seed": seed}
    out = _out_dir(args)
    spec = _get(cfg, "sweep", "")
    if not isinstance(spec, dict):
        raise ConfigError("sweep", "must be an object")
    kind = _choice(spec, "kind", "sweep", ("theta", "window"))

    if kind == "theta":
        factory = _theta_factory(_get(spec, "model", "sweep"), "sweep.model")
        grid = _get(spec, "thetas", "sweep")
        if isinstance(grid, dict):
            start = _number(grid, "start", "sweep.thetas")
            stop = _number(grid, "stop", "sweep.thetas")
            count = _integer(grid, "count", "sweep.thetas", lo=1)
            thetas = np.linspace(start, stop, count).tolist()
        elif isinstance(grid, list) and grid:
            thetas = [float(t) for t in grid]
        else:
            raise ConfigError("sweep.thetas", "must be a non-empty array or {start, stop, count}")
        n_per_point = _get(spec, "n_per_point", "sweep", default=None)
        if n_per_point is not None:
            n_per_point = _integer(spec, "n_per_point", "sweep", lo=1)
        points = theta_sweep(factory, thetas, n_trials=n_per_point, seed=seed)
        _write(out / "sweep.csv", bio.theta_sweep_csv(points, seed))
        if args.format == "json":
            _write(
                out / "sweep.json",
                bio.dump_json(
                    {
                        "schema_version": bio.SCHEMA_VERSION,
                        "seed": seed,
                        "points": [p.to_json() for p in points],
                    }
                ),
            )
        counts = {"points": len(points), "n_per_point": n_per_point}
    else:
        stream_a = bio.read_timetags_csv(Path(_get(spec, "timetags_a", "sweep")))
        stream_b = bio.read_timetags_csv(Path(_get(spec, "timetags_b", "sweep")))
        windows = _get(spec, "windows_ns", "sweep")
        if not isinstance(windows, list) or not windows:
            raise ConfigError("sweep.windows_ns", "must be a non-empty array of widths")
        for w in windows:
            if isinstance(w, bool) or not isinstance(w, int) or w <= 0:
                raise ConfigError("sweep.windows_ns", f"widths must be positive integers, got {w!r}")
        strategy = _choice(spec, "strategy", "sweep", ("lattice", "greedy"), default="lattice")
        points = window_sweep(stream_a, stream_b, windows, strategy=strategy)
        _write(out / "windows.csv", bio.window_sweep_csv(points, seed))
        if args.format == "json":
            _write(
                out / "windows.json",
                bio.dump_json(
                    {
                        "schema_version": bio.SCHEMA_VERSION,
                        "seed": seed,
                        "points": [
                            {
                                "window_ns": p.window_ns,
                                "S": p.s,
                                "summary": p.summary.to_json(),
                                "c_by_context": p.c_by_context,
                            }
                            for p in points
                        ],
                    }
                ),
            )
        counts = {"points": len(points), "strategy": strategy}

    meta = _metadata("sweep", seed, cfg, counts, [])
    _write(out / "metadata.json", bio.dump_json(meta))
    return EXIT_OK


def cmd_feasibility(args) -> int:
    cfg = load_config(Path(args.config))
    seed = _resolve_seed(args, cfg, required=False)
    contexts = _get(cfg, "contexts", "")
    if not isinstance(contexts, dict):
        raise ConfigError("contexts", 'must map context keys "00".."11" to 2x2 tables')
    tables = {}
    for s in CONTEXTS:
        raw = _get(contexts, s.key(), "contexts")
        try:
            tables[s] = np.asarray(raw, dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"contexts.{s.key()}", f"must be a numeric 2x2 table: {e}") from e
    result = coupling_feasibility(tables)
    doc = {
        "schema_version": bio.SCHEMA_VERSION,
        "belllab_version": __version__,
        "command": "feasibility",
        "seed": seed,
        "chsh_combinations": chsh_combinations(tables),
        **result.to_json(),
    }
    text = bio.dump_json(doc)
    if args.out is not None:
        out = _out_dir(args)
        _write(out / "feasibility.json", text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- entry point --------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="belllab",
        description="Bell-test simulation and analysis laboratory",
    )
    parser.add_argument("--version", action="version", version=f"belllab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, *, default_format: str, out_required: bool = True):
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if out_required:
            p.add_argument("--out", default=".", help="output directory (default: .)")
        else:
            p.add_argument("--out", default=None, help="output directory (default: stdout)")
        p.add_argument(
            "--format",
            choices=("csv", "json"),
            default=default_format,
            help=f"additional output format (default: {default_format})",
        )

    common(sub.add_parser("simulate", help="run a protocol simulation"), default_format="csv")
    common(sub.add_parser("analyze", help="estimate, test and report"), default_format="json")
    common(sub.add_parser("sweep", help="theta or window sweep"), default_format="csv")
    common(
        sub.add_parser("feasibility", help="joint-coupling LP feasibility"),
        default_format="json",
        out_required=False,
    )
    return parser


_COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "sweep": cmd_sweep,
    "feasibility": cmd_feasibility,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (BellLabError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except AssertionError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
