"""Batch front-end: simulate cohorts, fit strategies, compare by LOO,
and run desk-scale replication studies.

All commands read one JSON config and write artifacts under an output
directory.  CSV outputs are byte-identical across runs of the same
config and seed; wall-clock fields live in ``timing.csv`` and
``manifest.json`` only.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__
from .cohort import load_cohort_csv, load_cohort_json, save_cohort_csv, save_cohort_json
from .engine import FitSpec, fit, summarize
from .errors import ConfigError
from .graph import TransitionDiagram
from .loo import compare_loo, psis_loo
from .nuts import NutsConfig
from .posterior import PriorSpec
from .presets import PRESETS, make_sim_spec, preset_names
from .simulate import simulate_cohort
from .study import StudySpec, run_study

_COMMANDS = ("simulate", "fit", "compare", "study")


def _fmt(value) -> str:
    """Stable text form for CSV cells (repr round-trips floats)."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, rows, columns):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def _require(config: dict, key: str, command: str):
    if key not in config:
        raise ConfigError(f"'{command}' needs config key '{key}'")
    return config[key]


def _parse_nuts(d: dict, seed: int) -> NutsConfig:
    init = d.get("init", "uniform")
    bounds = (-2.0, 2.0)
    if isinstance(init, (list, tuple)):
        bounds = (float(init[0]), float(init[1]))
        init = "uniform"
    return NutsConfig(
        chains=int(d.get("chains", 2)),
        warmup=int(d.get("warmup", 300)),
        draws=int(d.get("draws", 1000)),
        target_accept=float(d.get("target_accept", 0.8)),
        max_tree_depth=int(d.get("max_tree_depth", 10)),
        seed=seed,
        init=init,
        init_bounds=bounds,
    )


def _parse_prior(d: dict) -> PriorSpec:
    return PriorSpec(
        normal_sd=float(d.get("normal_sd", 100.0)),
        half_cauchy_scale=float(d.get("half_cauchy_scale", 1.0)),
        inv_gamma_shape=float(d.get("inv_gamma_shape", 0.01)),
        inv_gamma_rate=float(d.get("inv_gamma_rate", 0.01)),
        corr_beta=tuple(d.get("corr_beta", (0.5, 0.5))),
    )


def _parse_fit(d: dict, seed: int) -> FitSpec:
    try:
        assoc = d.get("assoc_form", "linear")
        if isinstance(assoc, dict):
            assoc = {tuple(int(v) for v in k.split("-")): form for k, form in assoc.items()}
        return FitSpec(
            approach=d["approach"],
            linkage=d.get("linkage"),
            assoc_form=assoc,
            prior=_parse_prior(d.get("prior", {})),
            nuts=_parse_nuts(d, seed),
            blocks=tuple(d["blocks"]) if d.get("blocks") else None,
            label=d.get("label", ""),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid fit spec {d}: {exc}") from exc


def _diagram_from_config(config: dict) -> TransitionDiagram:
    if "diagram" in config:
        try:
            return TransitionDiagram.from_dict(config["diagram"])
        except Exception as exc:
            raise ConfigError(f"invalid diagram: {exc}") from exc
    if "preset" in config:
        name = config["preset"]
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {preset_names()}")
        return PRESETS[name]["diagram"]()
    raise ConfigError("config needs 'diagram' or 'preset'")


def _sim_spec_from_config(config: dict, seed: int):
    sim = config.get("simulate")
    if sim is None:
        return None
    if "preset" not in config:
        raise ConfigError("'simulate' currently requires a 'preset'")
    overrides = {k: v for k, v in sim.items() if k != "n"}
    if "n" not in sim:
        raise ConfigError("'simulate' needs the cohort size 'n'")
    return make_sim_spec(config["preset"], int(sim["n"]), seed=seed, **overrides)


def _load_data(config: dict, seed: int, diagram):
    sim = _sim_spec_from_config(config, seed)
    if sim is not None:
        return simulate_cohort(sim), sim
    src = config.get("cohort")
    if src is None:
        raise ConfigError("config needs a data source: 'simulate' or 'cohort'")
    path = Path(src)
    cohort = load_cohort_json(path) if path.is_file() else load_cohort_csv(path)
    cohort.validate(diagram)
    return cohort, None


def _manifest(out_dir: Path, payload: dict):
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True, default=str)


_SUMMARY_COLS = ("block", "parameter", "mean", "sd", "q2.5", "q97.5", "rhat", "ess_bulk", "mcse_mean")


def _cmd_simulate(config, out_dir: Path, seed: int, threads: int) -> int:
    diagram = _diagram_from_config(config)
    sim = _sim_spec_from_config(config, seed)
    if sim is None:
        raise ConfigError("'simulate' command needs the 'simulate' config section")
    cohort = simulate_cohort(sim)
    save_cohort_csv(cohort, out_dir)
    save_cohort_json(cohort, out_dir / "cohort.json")
    _manifest(out_dir, {"command": "simulate", "seed": seed, "n_subjects": len(cohort),
                        "preset": config.get("preset"), "diagram": diagram.to_dict()})
    print(f"simulate: wrote {len(cohort)} subjects to {out_dir}")
    return 0


def _fit_all(config, seed, threads, diagram, cohort, keep_draws):
    fits = [_parse_fit(d, seed) for d in _require(config, "fits", "fit")]
    labels = [f.name for f in fits]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"fit labels are not unique: {labels}")
    results = {}
    for spec in fits:
        results[spec.name] = fit(
            cohort, diagram, spec, seed=seed, threads=threads, keep_draws=keep_draws
        )
    return results


def _cmd_fit(config, out_dir: Path, seed: int, threads: int) -> int:
    diagram = _diagram_from_config(config)
    cohort, _ = _load_data(config, seed, diagram)
    results = _fit_all(config, seed, threads, diagram, cohort, keep_draws=True)
    loo_defs = config.get("loo_definitions", ["longitudinal", "joint"])
    status = 0
    manifest_blocks = {}
    for label, res in results.items():
        fit_dir = out_dir / label
        _write_csv(fit_dir / "summaries.csv", summarize(res), _SUMMARY_COLS)
        loo_payload = {}
        for key in sorted(res.blocks):
            bf = res.blocks[key]
            manifest_blocks.setdefault(label, {})[key] = {
                "wall_time_seconds": bf.wall_time_seconds,
                "divergences": bf.divergences,
                "error": bf.error,
            }
            if not bf.ok:
                status = 1
                continue
            draw_path = fit_dir / "draws" / f"{key.replace(':', '_')}.csv"
            draw_path.parent.mkdir(parents=True, exist_ok=True)
            with open(draw_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(bf.param_names)
                for row in bf.draws:
                    writer.writerow([repr(float(v)) for v in row])
            loo_payload[key] = {}
            for definition in loo_defs:
                loo = psis_loo(bf.pointwise[definition])
                loo_payload[key][definition] = {
                    "elpd_loo": loo.elpd_loo,
                    "se": loo.se,
                    "n_high_pareto_k": loo.n_high_k,
                }
        with open(fit_dir / "loo.json", "w") as fh:
            json.dump(loo_payload, fh, indent=1, sort_keys=True)
    _manifest(out_dir, {"command": "fit", "seed": seed, "threads": threads,
                        "blocks": manifest_blocks})
    print(f"fit: wrote {len(results)} fit(s) to {out_dir}")
    return status


def _cmd_compare(config, out_dir: Path, seed: int, threads: int) -> int:
    diagram = _diagram_from_config(config)
    cohort, _ = _load_data(config, seed, diagram)
    results = _fit_all(config, seed, threads, diagram, cohort, keep_draws=False)
    labels = list(results)
    if len(labels) < 2:
        raise ConfigError("'compare' needs at least two fits")
    loo_defs = config.get("loo_definitions", ["longitudinal", "joint"])
    rows = []
    for i, a in enumerate(labels):
        for b in labels[i + 1 :]:
            common = sorted(set(results[a].blocks) & set(results[b].blocks))
            for key in common:
                bf_a, bf_b = results[a].blocks[key], results[b].blocks[key]
                if not (bf_a.ok and bf_b.ok):
                    continue
                for definition in loo_defs:
                    loo_a = psis_loo(bf_a.pointwise[definition])
                    loo_b = psis_loo(bf_b.pointwise[definition])
                    delta, se = compare_loo(loo_a, loo_b)
                    rows.append(
                        {
                            "fit_a": a, "fit_b": b, "block": key, "definition": definition,
                            "elpd_a": loo_a.elpd_loo, "elpd_b": loo_b.elpd_loo,
                            "delta_elpd": delta, "se": se,
                            "winner": a if delta > 0 else (b if delta < 0 else "tie"),
                        }
                    )
    _write_csv(out_dir / "loo.csv", rows,
               ("fit_a", "fit_b", "block", "definition", "elpd_a", "elpd_b",
                "delta_elpd", "se", "winner"))
    with open(out_dir / "loo.json", "w") as fh:
        json.dump(rows, fh, indent=1, sort_keys=True)
    _manifest(out_dir, {"command": "compare", "seed": seed, "threads": threads})
    print(f"compare: wrote {len(rows)} comparison rows to {out_dir}")
    return 0


def _cmd_study(config, out_dir: Path, seed: int, threads: int) -> int:
    study_cfg = _require(config, "study", "study")
    diagram = _diagram_from_config(config)
    sim = _sim_spec_from_config(config, seed)
    if sim is None:
        raise ConfigError("'study' needs the 'simulate' config section")
    fits = tuple(_parse_fit(d, seed) for d in _require(config, "fits", "study"))
    spec = StudySpec(
        sim=sim,
        fits=fits,
        replicates=int(study_cfg.get("replicates", 20)),
        compare=tuple(tuple(p) for p in study_cfg.get("compare", [])),
        compare_definitions=tuple(study_cfg.get("definitions", ("longitudinal", "joint"))),
        seed=seed,
    )
    result = run_study(spec, threads=threads)
    study_dir = out_dir / "study"
    _write_csv(study_dir / "estimates.csv", result.estimates,
               ("replicate", "approach", "block", "parameter", "mean", "q2.5", "q97.5",
                "rhat", "ess_bulk"))
    _write_csv(study_dir / "coverage.csv", result.coverage,
               ("approach", "parameter", "truth", "n", "covered", "coverage",
                "mean_of_means", "median_of_means"))
    _write_csv(study_dir / "timing.csv", result.timing,
               ("replicate", "approach", "wall_time_max", "wall_time_total"))
    if result.loo_selection:
        _write_csv(study_dir / "loo_selection.csv", result.loo_selection,
                   ("replicate", "pair", "block", "definition", "elpd_a", "elpd_b",
                    "delta_elpd", "se", "winner"))
    _manifest(out_dir, {"command": "study", "seed": seed, "threads": threads,
                        "replicates": spec.replicates,
                        "failures": result.failures})
    print(f"study: {spec.replicates} replicates x {len(fits)} approaches -> {study_dir}")
    return 1 if result.failures else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="blockjm",
        description="Joint longitudinal-multistate models with blockwise inference",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=None, help="override config threads")
    args = parser.parse_args(argv)

    try:
        config = _load_config(args.config)
        seed = args.seed if args.seed is not None else int(config.get("seed", 0))
        threads = args.threads if args.threads is not None else int(config.get("threads", 1))
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        handler = {
            "simulate": _cmd_simulate,
            "fit": _cmd_fit,
            "compare": _cmd_compare,
            "study": _cmd_study,
        }[args.command]
        return handler(config, out_dir, seed, threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
