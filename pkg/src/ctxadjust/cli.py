"""Command-line pipeline: ingest, simulate, fit, select, diagnose, infer,
adjust, report, forecast-eval.

Every run writes a `manifest.json` (command, resolved arguments, config
hash, seed, artifact list with content hashes) next to its artifacts, so
any artifact can be reproduced and checked by re-running the command.
Figures are not rendered; their underlying data are emitted as CSV.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import adjustment, diagnostics, forecasting, inference
from .data import (BinningPolicy, MatchDataset, minutes_to_frame,
                   parse_commentary, parse_minute_csv, parse_odds_csv,
                   parse_results_csv, write_minute_csv, write_results_csv,
                   events_to_minutes)
from .errors import CtxAdjustError, SchemaError
from .gam import ContextGAM, LambdaSearch, attach_fitted_state, format_ic_row
from .synth import (GeneratorConfig, simulate_league, true_adjustment_table,
                    write_truth_csv)
from .terms import ModelSpec, default_terms

FAMILIES = ("poisson", "negative_binomial", "zip", "gaussian_identity",
            "gaussian_log")


def _jobs(args) -> int:
    if getattr(args, "jobs", None):
        return args.jobs
    env = os.environ.get("CTXADJUST_THREADS")
    return int(env) if env else 1


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(outdir: Path, command: str, args: argparse.Namespace,
                    artifacts: list[Path]):
    resolved = {k: v for k, v in sorted(vars(args).items())
                if k not in ("func", "out")}
    blob = json.dumps(resolved, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "args": resolved,
        "config_hash": hashlib.sha256(blob.encode()).hexdigest()[:16],
        "seed": getattr(args, "seed", None),
        "artifacts": [
            {"path": p.name, "sha256": _sha256(p)} for p in artifacts],
    }
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_minutes(path) -> pd.DataFrame:
    result = parse_minute_csv(path)
    result.raise_if_errors()
    return minutes_to_frame(result.observations)


def _load_terms(args, frame, per_season=False):
    if getattr(args, "spec", None):
        spec = ModelSpec.from_json(Path(args.spec).read_text())
        return spec.terms
    return default_terms(frame, include_season=not per_season)


def _binning(args) -> BinningPolicy:
    return BinningPolicy(score_cap=args.score_cap,
                         red_card_cap=args.red_card_cap,
                         minute_cap=args.minute_cap)


def _add_binning_flags(parser):
    parser.add_argument("--score-cap", type=int, default=3)
    parser.add_argument("--red-card-cap", type=int, default=2)
    parser.add_argument("--minute-cap", type=int, default=45)


def _fit_model(frame, y, terms, family, args) -> ContextGAM:
    model = ContextGAM(terms=terms, family=family, binning=_binning(args),
                       search=LambdaSearch())
    return model.fit(frame, y)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    out = _outdir(args)
    artifacts = []
    if args.minutes:
        result = parse_minute_csv(args.minutes)
        if result.errors and not args.skip_bad_rows:
            for err in result.errors[:20]:
                print(f"line {err.line}: {err.message}", file=sys.stderr)
            print(f"{len(result.errors)} invalid rows", file=sys.stderr)
            return 2
        dataset_path = out / "dataset.csv"
        write_minute_csv(dataset_path, result.observations)
        artifacts.append(dataset_path)
        if result.errors:
            report = out / "ingest_errors.csv"
            pd.DataFrame([{"line": e.line, "message": e.message}
                          for e in result.errors]).to_csv(report, index=False)
            artifacts.append(report)
    else:
        if not (args.commentary_dir and args.games and args.odds):
            print("ingest needs --minutes or all of --commentary-dir "
                  "--games --odds", file=sys.stderr)
            return 2
        games = parse_results_csv(args.games)
        odds = parse_odds_csv(args.odds)
        observations = []
        warnings_rows = []
        for game in games:
            path = Path(args.commentary_dir) / f"{game.game_id}.txt"
            with path.open() as fh:
                parsed = parse_commentary(fh, game.home_team, game.away_team,
                                          game_id=game.game_id)
            for w in parsed.warnings + parsed.unattributed:
                warnings_rows.append({"game_id": game.game_id,
                                      "line": w.line, "message": w.message})
            observations.extend(
                events_to_minutes(parsed.events, odds[game.game_id], game))
        dataset_path = out / "dataset.csv"
        write_minute_csv(dataset_path, observations)
        artifacts.append(dataset_path)
        results_path = out / "results.csv"
        write_results_csv(results_path, games)
        artifacts.append(results_path)
        if warnings_rows:
            report = out / "ingest_warnings.csv"
            pd.DataFrame(warnings_rows).to_csv(report, index=False)
            artifacts.append(report)
    _write_manifest(out, "ingest", args, artifacts)
    return 0


def cmd_simulate(args) -> int:
    out = _outdir(args)
    config = GeneratorConfig()
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        if "policy" in raw:
            raw["policy"] = BinningPolicy(**raw["policy"])
        config = dataclasses.replace(config, **raw)
    league = simulate_league(config, seed=args.seed)
    minutes_path = out / "minutes.csv"
    obs = league.dataset.minutes
    from .data import MinuteObservation
    rows = [MinuteObservation(
        game_id=r.game_id, team=r.team, opponent=r.opponent,
        home=bool(r.home), season=r.season, league=r.league, half=int(r.half),
        minute=int(r.minute), score_diff=int(r.score_diff),
        red_card_diff=int(r.red_card_diff),
        win_prob_diff=float(r.win_prob_diff), shots=int(r.shots),
        corners=int(r.corners)) for r in obs.itertuples(index=False)]
    write_minute_csv(minutes_path, rows)
    results_path = out / "results.csv"
    write_results_csv(results_path, league.dataset.results)
    truth_path = out / "truth.csv"
    write_truth_csv(truth_path, league.truth)
    table_path = out / "table.csv"
    league.table.to_csv(table_path, index=False)
    true_tab = out / "true_adjustment_table.csv"
    adjustment.write_adjustment_table_csv(
        true_tab, true_adjustment_table(config))
    artifacts = [minutes_path, results_path, truth_path, table_path, true_tab]
    _write_manifest(out, "simulate", args, artifacts)
    return 0


def cmd_fit(args) -> int:
    out = _outdir(args)
    frame = _load_minutes(args.data)
    terms = _load_terms(args, frame)
    model = _fit_model(frame, frame[args.stat].to_numpy(), terms,
                       args.family, args)
    model_path = out / "model.json"
    model_path.write_text(model.to_json())
    summary = {
        "family": model.family_.kind, "theta": model.theta_,
        "edf": model.edf_by_term_, "edf_total": model.edf_total_,
        "aic": model.aic_, "bic": model.bic_, "loglik": model.loglik_,
        "gcv": model.gcv_, "converged": model.converged_,
        "lambda": dict(zip(model.lambda_labels_, model.lambda_.tolist())),
        "boundary_flags": model.boundary_flags_,
    }
    summary_path = out / "fit_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    _write_manifest(out, "fit", args, [model_path, summary_path])
    return 0


def cmd_select(args) -> int:
    out = _outdir(args)
    frame = _load_minutes(args.data)
    terms = _load_terms(args, frame)
    families = FAMILIES if args.family == "all" else (args.family,)
    rows = []
    for family in families:
        model = _fit_model(frame, frame[args.stat].to_numpy(), terms,
                           family, args)
        rows.append({
            "family": family, "aic": model.aic_, "bic": model.bic_,
            "complexity": model.k_eff_,
            "aic_formatted": format_ic_row(model.aic_, model.k_eff_),
            "bic_formatted": format_ic_row(model.bic_, model.k_eff_),
            "loglik": model.loglik_, "theta": model.theta_,
        })
    table = pd.DataFrame(rows)
    path = out / "selection.csv"
    table.to_csv(path, index=False, float_format="%.6g")
    _write_manifest(out, "select", args, [path])
    print(table[["family", "aic_formatted", "bic_formatted"]]
          .to_string(index=False))
    return 0


def cmd_diagnose(args) -> int:
    out = _outdir(args)
    frame = _load_minutes(args.data)
    model = ContextGAM.from_json(Path(args.model).read_text())
    attach_fitted_state(model, frame)
    y = frame[args.stat].to_numpy(dtype=float)
    report = diagnostics.diagnostics_report(model, y, n_sim=args.n_sim,
                                            seed=args.seed)
    report_path = out / "diagnostics.json"
    report_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    artifacts = [report_path]
    if args.losocv:
        res = diagnostics.losocv(
            frame, model.terms, model.family_.kind, args.stat,
            estimator_kwargs={"binning": model.binning,
                              "theta": model.theta_},
            n_jobs=_jobs(args))
        folds_path = out / "losocv.csv"
        res.folds.to_csv(folds_path, index=False, float_format="%.6g")
        artifacts.append(folds_path)
        curve = diagnostics.calibration_curve(
            res.predictions["predicted"], res.predictions["observed"])
    else:
        curve = diagnostics.calibration_curve(model.predict(frame), y)
    curve_path = out / "calibration.csv"
    curve.to_csv(curve_path)
    artifacts.append(curve_path)
    _write_manifest(out, "diagnose", args, artifacts)
    return 0


def cmd_infer(args) -> int:
    out = _outdir(args)
    frame = _load_minutes(args.data)
    terms = _load_terms(args, frame, per_season=True)
    artifacts = []
    battery = inference.run_factor_battery(
        frame, args.stat, terms, args.family, n_jobs=_jobs(args),
        binning=_binning(args))
    battery_path = out / "battery.csv"
    inference.write_battery_csv(battery_path, battery)
    artifacts.append(battery_path)
    if args.interactions:
        pairs = [("score_diff", "minute"), ("score_diff", "win_prob_diff"),
                 ("red_card_diff", "minute"),
                 ("score_diff", "red_card_diff"),
                 ("win_prob_diff", "minute")]
        inter = inference.run_interaction_battery(
            frame, args.stat, terms, args.family, pairs,
            n_jobs=_jobs(args), binning=_binning(args))
        inter_path = out / "interactions.csv"
        inference.write_battery_csv(inter_path, inter)
        artifacts.append(inter_path)
    if args.game_effect:
        game = inference.run_game_effect_battery(
            frame, args.stat, terms, args.family, n_jobs=_jobs(args),
            binning=_binning(args))
        game_path = out / "game_effect.csv"
        inference.write_battery_csv(game_path, game)
        artifacts.append(game_path)
    _write_manifest(out, "infer", args, artifacts)
    return 0


def cmd_adjust(args) -> int:
    out = _outdir(args)
    frame = _load_minutes(args.data)
    model = ContextGAM.from_json(Path(args.model).read_text())
    table = adjustment.build_adjustment_table(model)
    table_path = out / "adjustment_table.csv"
    adjustment.write_adjustment_table_csv(table_path, table)
    report = adjustment.game_report(frame, table, args.stat)
    report_path = out / "game_report.csv"
    adjustment.write_game_report_csv(report_path, report)
    _write_manifest(out, "adjust", args, [table_path, report_path])
    return 0


def cmd_report(args) -> int:
    out = _outdir(args)
    frame = _load_minutes(args.data)
    results = parse_results_csv(args.results)
    terms = _load_terms(args, frame)
    model = _fit_model(frame, frame[args.stat].to_numpy(), terms,
                       args.family, args)
    model_path = out / "model.json"
    model_path.write_text(model.to_json())
    table = adjustment.build_adjustment_table(model)
    table_path = out / "adjustment_table.csv"
    adjustment.write_adjustment_table_csv(table_path, table)
    game_path = out / "game_report.csv"
    adjustment.write_game_report_csv(
        game_path, adjustment.game_report(frame, table, args.stat))

    summaries = []
    season_rows = []
    by_game = {r.game_id: r for r in results}
    for (league, season), group in frame.groupby(["league", "season"],
                                                 sort=True):
        season_results = [by_game[g] for g in group["game_id"].unique()
                          if g in by_game]
        dataset = MatchDataset(group, season_results)
        summ, excluded = adjustment.season_report(dataset, table, args.stat)
        summaries.extend(summ)
        for s in summ:
            season_rows.append(dataclasses.asdict(s))
        for team in excluded:
            season_rows.append({"team": team, "league": league,
                                "season": season, "games": 0})
    season_path = out / "season_summary.csv"
    pd.DataFrame(season_rows).to_csv(season_path, index=False,
                                     float_format="%.6g")
    shifts_path = out / "rank_shifts.csv"
    adjustment.rank_shift_listing(summaries).to_csv(
        shifts_path, index=False, float_format="%.6g")
    corr_path = out / "correlation.csv"
    adjustment.correlation_analysis(summaries, args.stat).to_csv(
        corr_path, index=False, float_format="%.6g")
    _write_manifest(out, "report", args, [
        model_path, table_path, game_path, season_path, shifts_path,
        corr_path])
    return 0


def cmd_forecast_eval(args) -> int:
    out = _outdir(args)
    frame = _load_minutes(args.data)
    results = parse_results_csv(args.results)
    model = ContextGAM.from_json(Path(args.model).read_text())
    table = adjustment.build_adjustment_table(model)
    by_game = {r.game_id: r for r in results}
    evals = []
    for (_league, _season), group in frame.groupby(["league", "season"],
                                                   sort=True):
        season_results = [by_game[g] for g in group["game_id"].unique()
                          if g in by_game]
        dataset = MatchDataset(group, season_results)
        evals.append(forecasting.evaluate_season(dataset, table, args.stat))
    eval_path = out / "forecast_evals.csv"
    forecasting.write_forecast_csv(eval_path, evals)
    summary = forecasting.forecast_summary(evals)
    summary_path = out / "forecast_summary.json"
    summary_path.write_text(
        json.dumps(summary.to_dict(orient="records"), indent=2) + "\n")
    _write_manifest(out, "forecast-eval", args, [eval_path, summary_path])
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctxadjust",
        description="Context adjustment of soccer offensive statistics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate or build the minute dataset")
    p.add_argument("--minutes")
    p.add_argument("--commentary-dir")
    p.add_argument("--games")
    p.add_argument("--odds")
    p.add_argument("--skip-bad-rows", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("simulate", help="generate a synthetic league")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    for name, func, needs_family in (
            ("fit", cmd_fit, True), ("select", cmd_select, False)):
        p = sub.add_parser(name)
        p.add_argument("--data", required=True)
        p.add_argument("--stat", default="shots",
                       choices=("shots", "corners"))
        if needs_family:
            p.add_argument("--family", default="negative_binomial",
                           choices=FAMILIES)
        else:
            p.add_argument("--family", default="all",
                           choices=FAMILIES + ("all",))
        p.add_argument("--spec")
        _add_binning_flags(p)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("diagnose")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--stat", default="shots", choices=("shots", "corners"))
    p.add_argument("--n-sim", type=int, default=250)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--losocv", action="store_true")
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("infer")
    p.add_argument("--data", required=True)
    p.add_argument("--stat", default="shots", choices=("shots", "corners"))
    p.add_argument("--family", default="negative_binomial", choices=FAMILIES)
    p.add_argument("--spec")
    p.add_argument("--interactions", action="store_true")
    p.add_argument("--game-effect", action="store_true")
    p.add_argument("--jobs", type=int)
    _add_binning_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("adjust")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--stat", default="shots", choices=("shots", "corners"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_adjust)

    p = sub.add_parser("report")
    p.add_argument("--data", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--stat", default="shots", choices=("shots", "corners"))
    p.add_argument("--family", default="negative_binomial", choices=FAMILIES)
    p.add_argument("--spec")
    _add_binning_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("forecast-eval")
    p.add_argument("--data", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--stat", default="shots", choices=("shots", "corners"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forecast_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SchemaError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CtxAdjustError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
