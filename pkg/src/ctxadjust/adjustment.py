"""Projection of raw offensive output onto a tied, even-strength home game.

A fitted model yields one multiplicative coefficient per context value:
exp(-(eta_context - eta_baseline)), with a 95% CI from the Bayesian
posterior covariance of the coefficients. Each minute's count is
multiplied by its score, red-card and venue coefficients and summed.
Game-level CIs propagate the per-context log-scale errors jointly (full
covariance between contexts, not independence) by the delta method.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .data import BinningPolicy
from .errors import FitError

Z95 = 1.959963984540054


@dataclass(frozen=True)
class ContextCoefficient:
    """Multiplier with CI for one context value; delta is the log difference."""

    point: float
    lo: float
    hi: float
    delta: float
    dvec: np.ndarray | None = None  # gradient of delta w.r.t. coefficients

    def __post_init__(self):
        if not (self.lo <= self.point <= self.hi):
            raise ValueError("coefficient CI must bracket the point")


@dataclass
class AdjustmentTable:
    """Per-context multiplicative coefficients with confidence intervals."""

    score: dict[int, ContextCoefficient]
    redcard: dict[int, ContextCoefficient]
    away: ContextCoefficient
    policy: BinningPolicy
    model_hash: str = ""
    posterior_cov: np.ndarray | None = None

    @property
    def has_uncertainty(self) -> bool:
        return self.posterior_cov is not None

    def score_coef(self, s: int) -> ContextCoefficient:
        s = int(np.clip(s, -self.policy.score_cap, self.policy.score_cap))
        return self.score[s]

    def redcard_coef(self, rc: int) -> ContextCoefficient:
        rc = int(np.clip(rc, -self.policy.red_card_cap,
                         self.policy.red_card_cap))
        return self.redcard[rc]

    @classmethod
    def from_coefficients(cls, score: dict[int, float],
                          redcard: dict[int, float] | None = None,
                          away: float = 1.0,
                          policy: BinningPolicy | None = None):
        """Build a table from bare multipliers (degenerate CIs); useful for
        applying externally supplied coefficients."""
        policy = policy or BinningPolicy()

        def wrap(c):
            return ContextCoefficient(point=c, lo=c, hi=c,
                                      delta=-float(np.log(c)))

        full_score = {
            s: wrap(score.get(s, 1.0))
            for s in range(-policy.score_cap, policy.score_cap + 1)}
        redcard = redcard or {}
        full_rc = {
            rc: wrap(redcard.get(rc, 1.0))
            for rc in range(-policy.red_card_cap, policy.red_card_cap + 1)}
        return cls(score=full_score, redcard=full_rc, away=wrap(away),
                   policy=policy, model_hash="injected")


@dataclass
class AdjustedStat:
    actual: float
    adjusted: float
    ci: tuple[float, float]
    up1goal_stat: float = 0.0
    up1goal_minutes: int = 0
    down1goal_stat: float = 0.0
    down1goal_minutes: int = 0
    up1man_stat: float = 0.0
    up1man_minutes: int = 0
    down1man_stat: float = 0.0
    down1man_minutes: int = 0
    home_minutes: int = 0
    away_minutes: int = 0


@dataclass
class SeasonSummary:
    team: str
    league: str
    season: str
    games: int
    points: int
    wins: int
    draws: int
    losses: int
    actual_per_game: float
    adjusted_per_game: float
    adjusted_ci: tuple[float, float]
    rank_actual: int = 0
    rank_adjusted: int = 0
    up1goal_stat: float = 0.0
    up1goal_minutes: float = 0.0
    rank_up1goal: int = 0
    down1goal_stat: float = 0.0
    down1goal_minutes: float = 0.0
    rank_down1goal: int = 0
    up1man_stat: float = 0.0
    up1man_minutes: float = 0.0
    rank_up1man: int = 0
    down1man_stat: float = 0.0
    down1man_minutes: float = 0.0
    rank_down1man: int = 0


# ---------------------------------------------------------------------------
# Table construction from a fitted model
# ---------------------------------------------------------------------------

def build_adjustment_table(model, policy: BinningPolicy | None = None,
                           score_covariate: str = "score_diff",
                           redcard_covariate: str = "red_card_diff",
                           away_covariate: str = "away") -> AdjustmentTable:
    """Derive the multiplicative coefficients from a fitted model.

    All other terms are held fixed, so they cancel in the linear predictor
    difference; that only holds without interaction terms, and a spec
    containing one is refused.
    """
    for term in model.design_.terms:
        if term.spec.kind == "tensor_interaction":
            raise FitError(
                "adjustment is undefined for models with interaction terms; "
                f"found {term.name}")
    policy = policy or model.binning or BinningPolicy()
    V = model.posterior_cov_
    beta = model.coef_
    p = len(beta)

    def coef_from_d(dvec: np.ndarray) -> ContextCoefficient:
        delta = float(dvec @ beta)
        var = float(dvec @ V @ dvec)
        se = np.sqrt(max(var, 0.0))
        lo = float(np.exp(-(delta + Z95 * se)))
        hi = float(np.exp(-(delta - Z95 * se)))
        return ContextCoefficient(point=float(np.exp(-delta)), lo=lo, hi=hi,
                                  delta=delta, dvec=dvec)

    def smooth_context(covariate, values):
        term = model.design_.term_for_covariate(covariate)
        span = model.design_.spans[term.name]
        rows = term.value_rows(list(values) + [0.0])
        base = rows[-1]
        out = {}
        for value, row in zip(values, rows[:-1]):
            d = np.zeros(p)
            d[span] = row - base
            out[int(value)] = coef_from_d(d)
        return out

    score = smooth_context(
        score_covariate, range(-policy.score_cap, policy.score_cap + 1))
    redcard = smooth_context(
        redcard_covariate,
        range(-policy.red_card_cap, policy.red_card_cap + 1))

    away_term = model.design_.term_for_covariate(away_covariate)
    span = model.design_.spans[away_term.name]
    d_away = np.zeros(p)
    d_away[span] = 1.0
    away = coef_from_d(d_away)

    return AdjustmentTable(score=score, redcard=redcard, away=away,
                           policy=policy, model_hash=model.spec_hash_,
                           posterior_cov=V)


# ---------------------------------------------------------------------------
# Applying the table
# ---------------------------------------------------------------------------

def adjust_team_game(minutes: pd.DataFrame, table: AdjustmentTable,
                     stat: str = "shots") -> AdjustedStat:
    """Project one team-game's output onto the shared baseline scenario.

    `minutes` holds that team's rows for a single game. Each minute's count
    is multiplied by its context coefficients and the results are summed.
    Differentials beyond the table's caps take the cap's coefficient, so
    unbinned input is handled identically to binned input.
    """
    counts = minutes[stat].to_numpy(dtype=float)
    score_vals = minutes["score_diff"].to_numpy()
    rc_vals = minutes["red_card_diff"].to_numpy()
    is_away = 1 - minutes["home"].to_numpy(dtype=int)

    grad = np.zeros_like(table.away.dvec) if table.has_uncertainty else None
    adjusted = 0.0
    for i in range(len(minutes)):
        cs = table.score_coef(score_vals[i])
        cr = table.redcard_coef(rc_vals[i])
        m = cs.point * cr.point
        if is_away[i]:
            m *= table.away.point
        contribution = counts[i] * m
        adjusted += contribution
        if grad is not None and contribution != 0.0:
            d = cs.dvec + cr.dvec
            if is_away[i]:
                d = d + table.away.dvec
            grad += contribution * d

    actual = float(counts.sum())
    if grad is not None and adjusted > 0:
        var = float(grad @ table.posterior_cov @ grad)
        se_log = np.sqrt(max(var, 0.0)) / adjusted
        ci = (adjusted * float(np.exp(-Z95 * se_log)),
              adjusted * float(np.exp(Z95 * se_log)))
    else:
        ci = (adjusted, adjusted)

    up_goal = score_vals >= 1
    down_goal = score_vals <= -1
    up_man = rc_vals <= -1
    down_man = rc_vals >= 1
    return AdjustedStat(
        actual=actual, adjusted=float(adjusted), ci=ci,
        up1goal_stat=float(counts[up_goal].sum()),
        up1goal_minutes=int(up_goal.sum()),
        down1goal_stat=float(counts[down_goal].sum()),
        down1goal_minutes=int(down_goal.sum()),
        up1man_stat=float(counts[up_man].sum()),
        up1man_minutes=int(up_man.sum()),
        down1man_stat=float(counts[down_man].sum()),
        down1man_minutes=int(down_man.sum()),
        home_minutes=int((1 - is_away).sum()),
        away_minutes=int(is_away.sum()))


def game_report(minutes: pd.DataFrame, table: AdjustmentTable,
                stat: str) -> pd.DataFrame:
    """Per team-game adjusted statistics in the game-report CSV layout."""
    rows = []
    grouped = minutes.groupby(["game_id", "team"], sort=True)
    for (game_id, team), group in grouped:
        adj = adjust_team_game(group, table, stat)
        rows.append({
            "league": group["league"].iloc[0], "team": team,
            "opponent": group["opponent"].iloc[0],
            "season": group["season"].iloc[0], "actual": adj.actual,
            "adjusted": adj.adjusted, "ci_lo": adj.ci[0], "ci_hi": adj.ci[1],
            "up1goal_stat": adj.up1goal_stat,
            "up1goal_min": adj.up1goal_minutes,
            "down1goal_stat": adj.down1goal_stat,
            "down1goal_min": adj.down1goal_minutes,
            "up1man_stat": adj.up1man_stat,
            "up1man_min": adj.up1man_minutes,
            "down1man_stat": adj.down1man_stat,
            "down1man_min": adj.down1man_minutes,
        })
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# Season-level reporting
# ---------------------------------------------------------------------------

def _rank_desc(values: dict[str, float]) -> dict[str, int]:
    """Rank 1 = largest; ties broken by team name for a clean permutation."""
    ordered = sorted(values, key=lambda t: (-values[t], t))
    return {team: i + 1 for i, team in enumerate(ordered)}


def season_report(dataset, table: AdjustmentTable, stat: str,
                  min_games: int = 5):
    """Per-team season summaries with dual rankings and context splits.

    Returns (summaries, excluded) where excluded lists teams with fewer
    than `min_games` games (kept out of the rankings).
    """
    minutes = dataset.minutes
    league = minutes["league"].iloc[0]
    season = minutes["season"].iloc[0]

    points = {}
    for r in dataset.results:
        for team in (r.home_team, r.away_team):
            points.setdefault(team, {"points": 0, "wins": 0, "draws": 0,
                                     "losses": 0, "games": 0})
        points[r.home_team]["games"] += 1
        points[r.away_team]["games"] += 1
        if r.home_goals > r.away_goals:
            points[r.home_team]["points"] += 3
            points[r.home_team]["wins"] += 1
            points[r.away_team]["losses"] += 1
        elif r.home_goals < r.away_goals:
            points[r.away_team]["points"] += 3
            points[r.away_team]["wins"] += 1
            points[r.home_team]["losses"] += 1
        else:
            points[r.home_team]["points"] += 1
            points[r.home_team]["draws"] += 1
            points[r.away_team]["points"] += 1
            points[r.away_team]["draws"] += 1

    totals = {}
    for (game_id, team), group in minutes.groupby(["game_id", "team"],
                                                  sort=True):
        adj = adjust_team_game(group, table, stat)
        agg = totals.setdefault(team, {
            "actual": 0.0, "adjusted": 0.0,
            "up1goal_stat": 0.0, "up1goal_minutes": 0.0,
            "down1goal_stat": 0.0, "down1goal_minutes": 0.0,
            "up1man_stat": 0.0, "up1man_minutes": 0.0,
            "down1man_stat": 0.0, "down1man_minutes": 0.0,
        })
        agg["actual"] += adj.actual
        agg["adjusted"] += adj.adjusted
        for key in ("up1goal_stat", "down1goal_stat", "up1man_stat",
                    "down1man_stat"):
            agg[key] += getattr(adj, key)
        for key in ("up1goal_minutes", "down1goal_minutes", "up1man_minutes",
                    "down1man_minutes"):
            agg[key] += getattr(adj, key)

    # Season CI: recompute the delta-method gradient over all of the
    # team's minutes at once (identical math to summing per-game).
    season_ci = {}
    if table.has_uncertainty:
        for team, group in minutes.groupby("team", sort=True):
            adj = adjust_team_game(group, table, stat)
            games = max(points.get(team, {}).get("games", 0), 1)
            season_ci[team] = (adj.ci[0] / games, adj.ci[1] / games)

    summaries = []
    excluded = []
    for team, agg in sorted(totals.items()):
        info = points.get(team, {"points": 0, "wins": 0, "draws": 0,
                                 "losses": 0, "games": 0})
        games = info["games"]
        if games < min_games:
            excluded.append(team)
            continue
        summaries.append(SeasonSummary(
            team=team, league=league, season=season, games=games,
            points=info["points"], wins=info["wins"], draws=info["draws"],
            losses=info["losses"],
            actual_per_game=agg["actual"] / games,
            adjusted_per_game=agg["adjusted"] / games,
            adjusted_ci=season_ci.get(
                team, (agg["adjusted"] / games, agg["adjusted"] / games)),
            up1goal_stat=agg["up1goal_stat"] / games,
            up1goal_minutes=agg["up1goal_minutes"] / games,
            down1goal_stat=agg["down1goal_stat"] / games,
            down1goal_minutes=agg["down1goal_minutes"] / games,
            up1man_stat=agg["up1man_stat"] / games,
            up1man_minutes=agg["up1man_minutes"] / games,
            down1man_stat=agg["down1man_stat"] / games,
            down1man_minutes=agg["down1man_minutes"] / games,
        ))

    rank_fields = [
        ("actual_per_game", "rank_actual"),
        ("adjusted_per_game", "rank_adjusted"),
        ("up1goal_stat", "rank_up1goal"),
        ("down1goal_stat", "rank_down1goal"),
        ("up1man_stat", "rank_up1man"),
        ("down1man_stat", "rank_down1man"),
    ]
    for value_field, rank_field in rank_fields:
        ranks = _rank_desc({s.team: getattr(s, value_field)
                            for s in summaries})
        for s in summaries:
            setattr(s, rank_field, ranks[s.team])
    return summaries, excluded


def rank_shift_listing(summaries: list[SeasonSummary]) -> pd.DataFrame:
    """Teams ordered by absolute per-game shift, strongest first."""
    rows = [{
        "team": s.team, "league": s.league, "season": s.season,
        "actual_per_game": s.actual_per_game,
        "adjusted_per_game": s.adjusted_per_game,
        "shift": s.adjusted_per_game - s.actual_per_game,
        "rank_actual": s.rank_actual, "rank_adjusted": s.rank_adjusted,
        "rank_change": s.rank_actual - s.rank_adjusted,
    } for s in summaries]
    frame = pd.DataFrame(rows)
    frame["abs_shift"] = frame["shift"].abs()
    return (frame.sort_values(["abs_shift", "team"],
                              ascending=[False, True])
                 .drop(columns="abs_shift").reset_index(drop=True))


# ---------------------------------------------------------------------------
# Correlation analysis
# ---------------------------------------------------------------------------

CORRELATION_CATEGORIES = [
    ("points", "points"),
    ("up1goal", "up1goal_stat"),
    ("down1goal", "down1goal_stat"),
    ("up1man", "up1man_stat"),
    ("down1man", "down1man_stat"),
]


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    if np.std(a) == 0 or np.std(b) == 0:
        return None
    return float(np.corrcoef(a, b)[0, 1])


def correlation_analysis(summaries: list[SeasonSummary],
                         stat: str = "shots") -> pd.DataFrame:
    """Mean Pearson correlation (with SE) of each category against the
    actual and the adjusted per-game statistic, across league-seasons."""
    groups: dict[tuple, list[SeasonSummary]] = {}
    for s in summaries:
        groups.setdefault((s.league, s.season), []).append(s)

    rows = []
    for label, attr in CORRELATION_CATEGORIES:
        with_actual, with_adjusted = [], []
        excluded = 0
        for key in sorted(groups):
            teams = groups[key]
            cat = np.array([getattr(s, attr) for s in teams], dtype=float)
            act = np.array([s.actual_per_game for s in teams])
            adj = np.array([s.adjusted_per_game for s in teams])
            r_act = _pearson(cat, act)
            r_adj = _pearson(cat, adj)
            if r_act is None or r_adj is None:
                excluded += 1
                continue
            with_actual.append(r_act)
            with_adjusted.append(r_adj)
        n = len(with_actual)
        rows.append({
            "stat": stat, "category": label, "n_league_seasons": n,
            "n_excluded": excluded,
            "corr_actual_mean": float(np.mean(with_actual)) if n else np.nan,
            "corr_actual_se":
                float(np.std(with_actual, ddof=1) / np.sqrt(n))
                if n > 1 else np.nan,
            "corr_adjusted_mean":
                float(np.mean(with_adjusted)) if n else np.nan,
            "corr_adjusted_se":
                float(np.std(with_adjusted, ddof=1) / np.sqrt(n))
                if n > 1 else np.nan,
        })
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# CSV artifacts
# ---------------------------------------------------------------------------

def write_adjustment_table_csv(path, table: AdjustmentTable):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["context_type", "context_value", "coef",
                         "ci_lo", "ci_hi"])
        for s in sorted(table.score):
            c = table.score[s]
            writer.writerow(["score", s, f"{c.point:.10g}",
                             f"{c.lo:.10g}", f"{c.hi:.10g}"])
        for rc in sorted(table.redcard):
            c = table.redcard[rc]
            writer.writerow(["red_card", rc, f"{c.point:.10g}",
                             f"{c.lo:.10g}", f"{c.hi:.10g}"])
        writer.writerow(["home_away", "away", f"{table.away.point:.10g}",
                         f"{table.away.lo:.10g}", f"{table.away.hi:.10g}"])


def write_game_report_csv(path, report: pd.DataFrame):
    report.to_csv(path, index=False, float_format="%.6g")
