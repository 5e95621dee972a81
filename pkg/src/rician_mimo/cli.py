"""Command-line experiment runner emitting machine-readable CSV results.

Experiments mirror the reference figure studies: antenna sweeps with a
Rayleigh baseline, per-UE SE collection for CDFs, uncorrelated-fading and
all-LoS variants, a pilot-reuse sweep, and a closed-form vs Monte Carlo
validation mode.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import channel, geometry, monte_carlo
from .config import ConfigError, ExperimentConfig
from .estimators import EstimatorKind
from .spectral_efficiency import DropEvaluator

EXPERIMENTS = ("sweep-M", "cdf", "uncorrelated", "all-los", "reuse-sweep", "validate")
CSV_COLUMNS = (
    "experiment", "point", "family",
    "drop", "cell", "ue", "kind", "direction", "sinr", "se",
    "mc_sinr", "mc_stderr",
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3

VALIDATE_SIGMA_TOL = 3.0
VALIDATE_REL_TOL = 0.02


@dataclass
class ExperimentResult:
    experiment: str
    seed: int
    config_hash: str
    rows: list[dict]
    max_sigma_deviation: float | None = None
    max_rel_deviation: float | None = None


def preset_path(name: str) -> Path:
    return Path(str(resources.files("rician_mimo") / "presets" / f"{name}.json"))


def _config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(config.to_json().encode()).hexdigest()[:16]


def _drop_rng(seed: int, drop: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(drop,)))


def _mc_rng(seed: int, drop: int, kind: EstimatorKind, direction: str) -> np.random.Generator:
    kind_id = list(EstimatorKind).index(kind)
    dir_id = 0 if direction == "ul" else 1
    return np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(drop, 1 + kind_id * 2 + dir_id))
    )


def _fmt(x) -> str:
    if x is None:
        return ""
    return format(float(x), ".12g")


def _drop_for_family(config: ExperimentConfig, family: str, drop: int):
    """One network realization for a fading family.

    Rayleigh baselines reuse the positions and covariances of the base-mode
    drop with the LoS means blocked, then re-derive serving and powers.
    """
    if family.endswith("+rayleigh"):
        base_mode = family.rsplit("+", 1)[0]
        base = geometry.drop_network(
            config.replace(fading_mode=base_mode), _drop_rng(config.seed, drop)
        )
        stripped = channel.strip_los(base.channel_stats)
        return geometry.rebuild_with_stats(base, stripped, config)
    cfg = config.replace(fading_mode=family)
    return geometry.drop_network(cfg, _drop_rng(config.seed, drop))


def _emit_rows(rows, experiment, point, family, drop, network, config, kinds,
               directions, mc_results=None):
    evaluator = DropEvaluator(network, config)
    for kind in kinds:
        for direction in directions:
            breakdowns = (
                evaluator.ul_sinr(kind) if direction == "ul" else evaluator.dl_sinr(kind)
            )
            prelog = config.prelog_ul if direction == "ul" else config.prelog_dl
            mc = (mc_results or {}).get((kind, direction))
            for b in breakdowns:
                u = b.ue
                rows.append({
                    "experiment": experiment,
                    "point": point,
                    "family": family,
                    "drop": drop,
                    "cell": int(network.ue_cell[u]),
                    "ue": u,
                    "kind": kind.value,
                    "direction": direction,
                    "sinr": _fmt(b.sinr),
                    "se": _fmt(prelog * np.log2(1.0 + b.sinr)),
                    "mc_sinr": _fmt(mc[u].value) if mc else "",
                    "mc_stderr": _fmt(mc[u].std_error) if mc else "",
                })
    return rows


def _sweep_grid(config: ExperimentConfig) -> list[int]:
    if config.M < 10:
        return [config.M]
    return list(range(10, config.M + 1, 10))


def run_experiment(
    config: ExperimentConfig,
    experiment: str,
    drops: int,
    trials: int,
    kinds: list[EstimatorKind],
    directions: list[str],
    out_path: Path,
) -> ExperimentResult:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unsupported experiment {experiment!r}")
    rows: list[dict] = []
    result = ExperimentResult(
        experiment=experiment, seed=config.seed, config_hash=_config_hash(config), rows=rows
    )

    if experiment in ("sweep-M", "uncorrelated", "all-los"):
        base_mode = {
            "sweep-M": config.fading_mode,
            "uncorrelated": "uncorrelated",
            "all-los": "all-los",
        }[experiment]
        families = [base_mode]
        if experiment in ("sweep-M", "uncorrelated") and base_mode != "rayleigh-only":
            families.append(base_mode + "+rayleigh")
        grid = _sweep_grid(config)
        for drop in range(drops):
            for family in families:
                network = _drop_for_family(config, family, drop)
                for m in grid:
                    cfg_m = config.replace(M=m, fading_mode=config.fading_mode)
                    net_m = geometry.rebuild_with_stats(
                        network, network.channel_stats.restrict_antennas(m), cfg_m
                    )
                    _emit_rows(rows, experiment, m, family, drop, net_m, cfg_m,
                               kinds, directions)

    elif experiment == "cdf":
        for drop in range(drops):
            network = _drop_for_family(config, config.fading_mode, drop)
            _emit_rows(rows, experiment, config.M, config.fading_mode, drop,
                       network, config, kinds, directions)

    elif experiment == "reuse-sweep":
        for f in (1, 2, 4):
            tau_p = f * config.K
            tau_u = config.tau_c - tau_p - config.tau_d
            if tau_u < 0:
                print(f"skipping reuse factor {f}: tau_p exceeds the coherence block",
                      file=sys.stderr)
                continue
            cfg_f = config.replace(reuse_factor=f, tau_p=tau_p, tau_u=tau_u)
            for drop in range(drops):
                network = _drop_for_family(cfg_f, cfg_f.fading_mode, drop)
                _emit_rows(rows, experiment, f, cfg_f.fading_mode, drop,
                           network, cfg_f, kinds, directions)

    else:  # validate
        max_sigma = 0.0
        max_rel = 0.0
        for drop in range(drops):
            network = _drop_for_family(config, config.fading_mode, drop)
            evaluator = DropEvaluator(network, config)
            mc_results = {}
            for kind in kinds:
                for direction in directions:
                    mc_results[(kind, direction)] = monte_carlo.mc_sinr(
                        kind, direction, network, config, trials,
                        rng=_mc_rng(config.seed, drop, kind, direction),
                    )
                    closed = (
                        evaluator.ul_sinr(kind) if direction == "ul"
                        else evaluator.dl_sinr(kind)
                    )
                    for b, m in zip(closed, mc_results[(kind, direction)]):
                        if b.sinr == 0.0 and m.value == 0.0:
                            continue
                        dev = abs(b.sinr - m.value)
                        if m.std_error > 0:
                            max_sigma = max(max_sigma, dev / m.std_error)
                        if b.sinr > 0:
                            max_rel = max(max_rel, dev / b.sinr)
            _emit_rows(rows, experiment, config.M, config.fading_mode, drop,
                       network, config, kinds, directions, mc_results)
        result.max_sigma_deviation = max_sigma
        result.max_rel_deviation = max_rel

    _write_csv(out_path, rows)
    meta = {
        "experiment": experiment,
        "seed": config.seed,
        "config_hash": result.config_hash,
        "config": config.to_dict(),
        "drops": drops,
    }
    if result.max_sigma_deviation is not None:
        meta["max_sigma_deviation"] = result.max_sigma_deviation
        meta["max_rel_deviation"] = result.max_rel_deviation
    out_path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return result


def _write_csv(path: Path, rows: list[dict]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def summarize(result_files: list[Path], out_path: Path):
    """Aggregate result CSVs: per-point mean sum SE across drops and per-UE
    SE percentiles (5/50/95), grouped by (point, family, kind, direction)."""
    if not result_files:
        raise ConfigError("summarize needs at least one result file")
    groups: dict[tuple, dict] = {}
    for path in result_files:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
            if missing:
                raise ConfigError(f"{path}: missing columns {sorted(missing)}")
            for row in reader:
                key = (row["experiment"], row["point"], row["family"],
                       row["kind"], row["direction"])
                g = groups.setdefault(key, {"se": [], "per_drop": {}})
                se = float(row["se"])
                g["se"].append(se)
                g["per_drop"].setdefault(row["drop"], 0.0)
                g["per_drop"][row["drop"]] += se
    out_rows = []
    for key in sorted(groups):
        experiment, point, family, kind, direction = key
        g = groups[key]
        se = np.array(g["se"])
        sums = np.array(list(g["per_drop"].values()))
        out_rows.append({
            "experiment": experiment, "point": point, "family": family,
            "kind": kind, "direction": direction,
            "mean_sum_se": _fmt(sums.mean()),
            "mean_se": _fmt(se.mean()),
            "p5_se": _fmt(np.percentile(se, 5)),
            "p50_se": _fmt(np.percentile(se, 50)),
            "p95_se": _fmt(np.percentile(se, 95)),
        })
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(out_rows[0].keys()))
        writer.writeheader()
        writer.writerows(out_rows)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rician-mimo",
        description="Multi-cell massive MIMO SE simulator (Rician fading, MR processing)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write a CSV")
    run.add_argument("--config", required=True, help="config JSON path or preset name")
    run.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    run.add_argument("--drops", type=int, default=100)
    run.add_argument("--trials", type=int, default=monte_carlo.DEFAULT_TRIALS)
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=None, help="output CSV path")
    run.add_argument("--estimators", default="mmse,ew-mmse,ls",
                     help="comma-separated subset of mmse,ew-mmse,ls,mo")
    run.add_argument("--direction", choices=("ul", "dl", "both"), default="ul")

    summ = sub.add_parser("summarize", help="aggregate result CSVs")
    summ.add_argument("files", nargs="+")
    summ.add_argument("--out", default="summary.csv")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "summarize":
            summarize([Path(f) for f in args.files], Path(args.out))
            return EXIT_OK

        config_arg = Path(args.config)
        if not config_arg.exists():
            candidate = preset_path(args.config)
            if candidate.exists():
                config_arg = candidate
            else:
                raise ConfigError(f"config file {args.config!r} not found")
        config = ExperimentConfig.from_file(config_arg)
        if args.seed is not None:
            config = config.replace(seed=args.seed)
        kinds = [EstimatorKind.parse(k) for k in args.estimators.split(",") if k]
        if args.experiment == "validate" and args.estimators == "mmse,ew-mmse,ls":
            kinds = list(EstimatorKind)
        directions = ["ul", "dl"] if args.direction == "both" else [args.direction]
        out = Path(args.out) if args.out else Path(f"results_{args.experiment}.csv")
        result = run_experiment(
            config, args.experiment, args.drops, args.trials, kinds, directions, out
        )
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    print(f"wrote {len(result.rows)} rows to {out}")
    if args.experiment == "validate":
        print(
            f"validate: max deviation = {result.max_sigma_deviation:.2f} combined "
            f"standard errors, max relative deviation = "
            f"{100 * result.max_rel_deviation:.3f}%"
        )
        if (result.max_sigma_deviation > VALIDATE_SIGMA_TOL
                or result.max_rel_deviation > VALIDATE_REL_TOL):
            print("validate: closed form and Monte Carlo disagree beyond tolerance",
                  file=sys.stderr)
            return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
