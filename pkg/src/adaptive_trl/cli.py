"""Command-line driver.

Subcommands
-----------
train             value iteration for one penalty; writes ``weights.json``
extract-pd        adds post-decision weights to an existing ``weights.json``
filter-scenarios  writes the unfiltered and NMAC-filtered scenario files
evaluate          runs one policy on the scenario files
sweep             Pareto sweep of one policy family (train + extract + evaluate per value)
slice-value       value function slice CSV
slice-policy      policy slice CSV

Exit codes: 0 success, 1 usage or missing artifact, 2 invalid config,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import mdp
from .adp import SolverError, extract_post_decision_weights, projected_value_iteration
from .config import SCALES, ConfigError, RunConfig, load_config
from .io import (
    SLICE_SPACING,
    ArtifactError,
    Manifest,
    export_policy_slice,
    export_value_slice,
    load_scenarios,
    load_weights,
    save_scenarios,
    save_weights,
    write_pareto_csv,
    write_reports_csv,
    write_weights,
)
from .policies import (
    DIRECT_TURN,
    FAMILIES,
    OPTIMIZED_TRL,
    PAPER_PARAMS,
    STATIC,
    DirectTurn,
    FilterError,
    OptimizedTrl,
    ScenarioSets,
    StaticTrl,
    build_scenario_sets,
    evaluate,
    pareto_sweep,
)

log = logging.getLogger("adaptive_trl")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

WEIGHTS_FILE = "weights.json"
UNFILTERED_FILE = "scenarios_unfiltered.json"
FILTERED_FILE = "scenarios_filtered.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _family_mode(family: str) -> str:
    return mdp.DIRECT if family == DIRECT_TURN else mdp.TRL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value config file")
    common.add_argument("--seed", type=int, help="seed for solver and scenario streams")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    common.add_argument("--scale", choices=SCALES, default="desk", help="sample-count preset (default: desk)")
    common.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="adaptive-trl", description="Adaptive trusted resolution logic toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="projected value iteration")
    p.add_argument("--family", choices=(OPTIMIZED_TRL, DIRECT_TURN), default=OPTIMIZED_TRL)
    p.add_argument("--lambda", dest="lam", type=float, help="NMAC penalty (overrides config)")

    p = sub.add_parser("extract-pd", parents=[common], help="fit post-decision weights")
    p.add_argument("--weights", type=Path, help="weights file (default: OUT/weights.json)")

    sub.add_parser("filter-scenarios", parents=[common], help="generate evaluation scenario sets")

    p = sub.add_parser("evaluate", parents=[common], help="evaluate one policy")
    p.add_argument("--family", choices=FAMILIES, default=STATIC)
    p.add_argument("--dbar", type=float, help="separation for the static family (m)")
    p.add_argument("--weights", type=Path, help="weights file for optimized families")
    p.add_argument("--scenarios", type=Path, help="directory holding the scenario files (default: OUT)")

    p = sub.add_parser("sweep", parents=[common], help="Pareto sweep of one family")
    p.add_argument("--family", choices=FAMILIES, default=STATIC)
    p.add_argument("--params", type=str, help="comma-separated lambda or D-bar values (default: published lists)")
    p.add_argument("--lambda", dest="lam", type=float, help="single lambda value to sweep")
    p.add_argument("--dbar", type=float, help="single D-bar value to sweep")
    p.add_argument("--scenarios", type=Path, help="reuse scenario files from this directory")

    for name, helptext in (("slice-value", "value function slice"), ("slice-policy", "policy slice")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--weights", type=Path, help="weights file (default: OUT/weights.json)")
        p.add_argument("--spacing", type=float, default=SLICE_SPACING, help="pixel spacing in meters")
    return parser


def _config(args) -> RunConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
        overrides["scenario_seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if getattr(args, "lam", None) is not None:
        overrides["lambda"] = args.lam
    return load_config(args.config, args.scale, overrides)


def _manifest(args, cfg: RunConfig) -> Manifest:
    arguments = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if k not in ("verbose", "out", "workers")
    }
    # the worker count never changes results, so it stays out of the provenance hash
    config = {k: v for k, v in cfg.snapshot().items() if k != "workers"}
    return Manifest(command=args.command, arguments=arguments, config=config, seed=cfg.solver.seed)


def _finish(manifest: Manifest, out: Path, outputs: Sequence[Path]) -> None:
    manifest.outputs = [str(p) for p in outputs]
    path = manifest.write(out / f"manifest-{manifest.command}.json")
    for p in outputs:
        print(p)
    print(path)


def _diagnostics_sink(path: Path):
    fh = path.open("w")

    def emit(record: dict) -> None:
        fh.write(json.dumps(record) + "\n")
        fh.flush()
        log.info("%s %d residual_rms=%.4g theta_norm=%.4g", record["stage"], record["iteration"],
                 record["residual_rms"], record["theta_norm"])

    return fh, emit


def _weights_path(args) -> Path:
    return args.weights if getattr(args, "weights", None) is not None else args.out / WEIGHTS_FILE


def _policy_from_weights(path: Path, cfg: RunConfig, family: str | None = None):
    art = load_weights(path, cfg.scenario)
    stored = art.meta.get("family", OPTIMIZED_TRL)
    if family is not None and family != stored:
        raise UsageError(f"{path} holds {stored!r} weights, not {family!r}")
    cls = DirectTurn if stored == DIRECT_TURN else OptimizedTrl
    actions = tuple(art.meta.get("action_set") or cfg.actions(_family_mode(stored)))
    return cls(theta_q=art.require_theta_q(), action_set=actions, stage_reward=bool(cfg.policy_stage_reward)), art


def _scenario_sets(directory: Path) -> ScenarioSets:
    paths = [directory / UNFILTERED_FILE, directory / FILTERED_FILE]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise ArtifactError(f"scenario file(s) missing: {', '.join(missing)}; run filter-scenarios first")
    return ScenarioSets(unfiltered=load_scenarios(paths[0]), filtered=load_scenarios(paths[1]))


# --- commands ---------------------------------------------------------------

def cmd_train(args, cfg: RunConfig) -> None:
    manifest = _manifest(args, cfg)
    mode = _family_mode(args.family)
    solver = cfg.solver_for(mode)
    diag_path = args.out / "diagnostics-train.jsonl"
    fh, emit = _diagnostics_sink(diag_path)
    try:
        theta = projected_value_iteration(cfg.scenario, solver, cfg.workers, emit)
    finally:
        fh.close()
    meta = {"family": args.family, "mode": mode, "lambda": cfg.scenario.lam,
            "action_set": list(solver.actions(cfg.scenario))}
    path = save_weights(args.out / WEIGHTS_FILE, theta, None, cfg.scenario, manifest.stable_dict(), meta)
    _finish(manifest, args.out, [path, diag_path])


def cmd_extract_pd(args, cfg: RunConfig) -> None:
    src = _weights_path(args)
    art = load_weights(src, cfg.scenario)
    mode = art.meta.get("mode", mdp.TRL)
    manifest = _manifest(args, cfg)
    diag_path = args.out / "diagnostics-extract-pd.jsonl"
    fh, emit = _diagnostics_sink(diag_path)
    try:
        art.theta_q = extract_post_decision_weights(art.theta, cfg.scenario, cfg.solver_for(mode), cfg.workers, emit)
    finally:
        fh.close()
    art.meta = dict(art.meta, post_decision_manifest=manifest.ref)
    path = write_weights(args.out / WEIGHTS_FILE, art)
    _finish(manifest, args.out, [path, diag_path])


def cmd_filter_scenarios(args, cfg: RunConfig) -> None:
    manifest = _manifest(args, cfg)
    sets = build_scenario_sets(cfg.scenario, cfg.n_unfiltered, cfg.n_filtered, cfg.scenario_seed)
    outputs = [
        save_scenarios(args.out / UNFILTERED_FILE, sets.unfiltered, "unfiltered", manifest.ref),
        save_scenarios(args.out / FILTERED_FILE, sets.filtered, "nmac-filtered", manifest.ref),
    ]
    _finish(manifest, args.out, outputs)


def cmd_evaluate(args, cfg: RunConfig) -> None:
    sets = _scenario_sets(args.scenarios or args.out)
    if args.family == STATIC:
        if args.dbar is None:
            raise UsageError("evaluate --family static needs --dbar")
        policy = StaticTrl(args.dbar)
    else:
        policy, _ = _policy_from_weights(_weights_path(args), cfg, args.family)
    manifest = _manifest(args, cfg)
    reports = {
        "unfiltered": evaluate(policy, sets.unfiltered, cfg.scenario),
        "nmac-filtered": evaluate(policy, sets.filtered, cfg.scenario),
    }
    csv_path = write_reports_csv(args.out / f"eval-{args.family}.csv", reports, manifest.ref)
    _finish(manifest, args.out, [csv_path])


def _sweep_params(args) -> tuple[float, ...]:
    if args.params:
        try:
            return tuple(float(v) for v in args.params.split(",") if v.strip())
        except ValueError:
            raise UsageError(f"--params must be comma-separated numbers, got {args.params!r}") from None
    single = args.dbar if args.family == STATIC else args.lam
    if single is not None:
        return (single,)
    return PAPER_PARAMS[args.family]


def cmd_sweep(args, cfg: RunConfig) -> None:
    params = _sweep_params(args)
    if args.scenarios is not None:
        sets = _scenario_sets(args.scenarios)
    else:
        sets = build_scenario_sets(cfg.scenario, cfg.n_unfiltered, cfg.n_filtered, cfg.scenario_seed)
    manifest = _manifest(args, cfg)
    solver = cfg.solver_for(_family_mode(args.family))
    points = pareto_sweep(args.family, cfg.scenario, solver, sets, params, cfg.workers,
                          stage_reward=bool(cfg.policy_stage_reward))
    for p in points:
        if p.error:
            log.error("%s %g failed: %s", p.family, p.param, p.error)
    path = write_pareto_csv(args.out / f"pareto-{args.family}.csv", points, manifest.ref)
    _finish(manifest, args.out, [path])
    if any(p.error for p in points):
        raise SolverError("one or more sweep points failed; see the error column")


def cmd_slice_value(args, cfg: RunConfig) -> None:
    art = load_weights(_weights_path(args), cfg.scenario)
    manifest = _manifest(args, cfg)
    path = export_value_slice(art.theta, cfg.scenario, args.out / "value-slice.csv", manifest.ref, spacing=args.spacing)
    _finish(manifest, args.out, [path])


def cmd_slice_policy(args, cfg: RunConfig) -> None:
    policy, _ = _policy_from_weights(_weights_path(args), cfg)
    manifest = _manifest(args, cfg)
    path = export_policy_slice(policy, cfg.scenario, args.out / "policy-slice.csv", manifest.ref, spacing=args.spacing)
    _finish(manifest, args.out, [path])


COMMANDS = {
    "train": cmd_train,
    "extract-pd": cmd_extract_pd,
    "filter-scenarios": cmd_filter_scenarios,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "slice-value": cmd_slice_value,
    "slice-policy": cmd_slice_policy,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, cfg)
    except (UsageError, ArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, FilterError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
