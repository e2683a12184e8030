"""Forecasting evaluation: do adjusted statistics predict future results
better than raw ones?

Each season is split at its chronological midpoint. Per-team per-game
averages of the statistic (actual or adjusted) are computed from the
training half only, then a two-predictor linear regression (home team's
average, away team's average, plus intercept) forecasts the final score
differential of each test-half game. RMSE differences across seasons feed
a paired t-test, with Shapiro-Wilk checking the normality assumption and
Holm correction applied across leagues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .adjustment import AdjustmentTable, adjust_team_game
from .data import MatchDataset
from .errors import DegenerateFitError
from .inference import holm_adjust


@dataclass
class ForecastEval:
    league: str
    season: str
    rmse_actual: float
    rmse_adjusted: float
    n_test: int
    n_excluded: int

    @property
    def diff(self) -> float:
        return self.rmse_actual - self.rmse_adjusted


def team_game_values(dataset: MatchDataset, stat: str,
                     table: AdjustmentTable | None = None) -> pd.DataFrame:
    """Per-(game_id, team) totals: raw counts, or adjusted when a table is
    given."""
    rows = []
    for (game_id, team), group in dataset.minutes.groupby(
            ["game_id", "team"], sort=True):
        if table is None:
            value = float(group[stat].sum())
        else:
            value = adjust_team_game(group, table, stat).adjusted
        rows.append({"game_id": game_id, "team": team, "value": value})
    return pd.DataFrame(rows)


def half_season_forecast(dataset: MatchDataset,
                         values: pd.DataFrame) -> dict:
    """Train on the first half of a season's fixtures, test on the rest.

    `values` holds one statistic value per (game_id, team). Per-team
    averages are computed from the training half only. Test games whose
    teams never appear in the training half are excluded and counted.
    Collinear or constant predictors degrade gracefully through a
    minimum-norm least-squares solve.
    """
    results = sorted(dataset.results, key=lambda r: (r.date_index, r.game_id))
    n_games = len(results)
    n_train = math.ceil(n_games / 2)
    train, test = results[:n_train], results[n_train:]
    if not test:
        raise ValueError("season too short to split")

    value_map = {(r.game_id, r.team): r.value
                 for r in values.itertuples(index=False)}
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}
    for r in train:
        for team in (r.home_team, r.away_team):
            sums[team] = sums.get(team, 0.0) + value_map[(r.game_id, team)]
            counts[team] = counts.get(team, 0) + 1
    averages = {team: sums[team] / counts[team] for team in sums}

    def rows_for(games):
        X, y, skipped = [], [], 0
        for r in games:
            if r.home_team not in averages or r.away_team not in averages:
                skipped += 1
                continue
            X.append([1.0, averages[r.home_team], averages[r.away_team]])
            y.append(float(r.home_goals - r.away_goals))
        return np.asarray(X), np.asarray(y), skipped

    X_train, y_train, _ = rows_for(train)
    coef, *_ = np.linalg.lstsq(X_train, y_train, rcond=None)
    X_test, y_test, excluded = rows_for(test)
    if len(y_test) == 0:
        raise ValueError("no evaluable test games")
    pred = X_test @ coef
    rmse = float(np.sqrt(np.mean((y_test - pred) ** 2)))
    return {"rmse": rmse, "n_test": len(y_test), "n_excluded": excluded,
            "coef": coef}


def evaluate_season(dataset: MatchDataset, table: AdjustmentTable,
                    stat: str) -> ForecastEval:
    """RMSE of the actual-statistic and adjusted-statistic forecasts for
    one league-season dataset."""
    league = dataset.minutes["league"].iloc[0]
    season = dataset.minutes["season"].iloc[0]
    actual = half_season_forecast(dataset, team_game_values(dataset, stat))
    adjusted = half_season_forecast(
        dataset, team_game_values(dataset, stat, table))
    return ForecastEval(
        league=league, season=season, rmse_actual=actual["rmse"],
        rmse_adjusted=adjusted["rmse"], n_test=actual["n_test"],
        n_excluded=max(actual["n_excluded"], adjusted["n_excluded"]))


def paired_ttest(diffs) -> tuple[float, float, tuple[float, float]]:
    """One-sample t-test of the mean difference against zero.

    Returns (t, two-sided p, 95% CI). Needs at least 3 values with
    positive spread.
    """
    diffs = np.asarray(diffs, dtype=float)
    n = len(diffs)
    if n < 3:
        raise ValueError("paired t-test needs >= 3 differences")
    sd = float(np.std(diffs, ddof=1))
    if sd == 0.0:
        raise DegenerateFitError("differences have zero variance")
    mean = float(np.mean(diffs))
    se = sd / math.sqrt(n)
    t = mean / se
    p = float(2.0 * stats.t.sf(abs(t), n - 1))
    half = float(stats.t.ppf(0.975, n - 1)) * se
    return float(t), p, (mean - half, mean + half)


# ---------------------------------------------------------------------------
# Shapiro-Wilk (Royston's AS R94 approximation)
# ---------------------------------------------------------------------------

_SW_C1 = (-2.706056, 4.434685, -2.071190, -0.147981, 0.221157, 0.0)
_SW_C2 = (-3.582633, 5.682633, -1.752461, -0.293762, 0.042981, 0.0)
_SW_C3 = (-0.0006714, 0.025054, -0.39978, 0.5440)
_SW_C4 = (-0.0020322, 0.062767, -0.77857, 1.3822)
_SW_C5 = (0.0038915, -0.083751, -0.31082, -1.5861)
_SW_C6 = (0.0030302, -0.082676, -0.4803)


def shapiro_wilk(x) -> tuple[float, float]:
    """Shapiro-Wilk W and p-value for 3 <= n <= 5000 samples.

    Coefficients follow Royston (1995), algorithm AS R94: expected normal
    order statistics with polynomial-corrected end weights, and the
    established normalizing transformation of W for the p-value.
    """
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    if n < 3 or n > 5000:
        raise ValueError("shapiro_wilk supports 3 <= n <= 5000")
    if x[0] == x[-1]:
        raise ValueError("all values identical")

    m = stats.norm.ppf((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    ssumm2 = float(np.sum(m ** 2))
    rsn = 1.0 / math.sqrt(n)
    a = np.empty(n)
    if n == 3:
        a[0] = math.sqrt(0.5)
        a[2] = -a[0]
        a[1] = 0.0
    else:
        an = np.polyval(_SW_C1, rsn) + m[-1] / math.sqrt(ssumm2)
        if n <= 5:
            phi = (ssumm2 - 2.0 * m[-1] ** 2) / (1.0 - 2.0 * an ** 2)
            a[1:-1] = m[1:-1] / math.sqrt(phi)
            a[-1] = an
            a[0] = -an
        else:
            an1 = np.polyval(_SW_C2, rsn) + m[-2] / math.sqrt(ssumm2)
            phi = ((ssumm2 - 2.0 * m[-1] ** 2 - 2.0 * m[-2] ** 2)
                   / (1.0 - 2.0 * an ** 2 - 2.0 * an1 ** 2))
            a[2:-2] = m[2:-2] / math.sqrt(phi)
            a[-1], a[-2] = an, an1
            a[0], a[1] = -an, -an1

    xbar = float(np.mean(x))
    denom = float(np.sum((x - xbar) ** 2))
    W = float(np.sum(a * x) ** 2 / denom)
    W = min(W, 1.0)

    if n == 3:
        p = (6.0 / math.pi) * (math.asin(math.sqrt(W))
                               - math.asin(math.sqrt(0.75)))
        return W, float(np.clip(p, 0.0, 1.0))
    if n <= 11:
        gamma = -2.273 + 0.459 * n
        wt = -math.log(max(gamma - math.log1p(-W), 1e-300))
        mu = np.polyval(_SW_C3, n)
        sigma = math.exp(np.polyval(_SW_C4, n))
    else:
        ln_n = math.log(n)
        wt = math.log1p(-W)
        mu = np.polyval(_SW_C5, ln_n)
        sigma = math.exp(np.polyval(_SW_C6, ln_n))
    z = (wt - mu) / sigma
    return W, float(stats.norm.sf(z))


# ---------------------------------------------------------------------------
# Multi-league summary
# ---------------------------------------------------------------------------

def forecast_summary(evals: list[ForecastEval]) -> pd.DataFrame:
    """Per-league paired t-tests with Shapiro-Wilk checks and Holm across
    leagues."""
    rows = []
    by_league: dict[str, list[ForecastEval]] = {}
    for ev in evals:
        by_league.setdefault(ev.league, []).append(ev)
    for league in sorted(by_league):
        diffs = [ev.diff for ev in by_league[league]]
        t, p, ci = paired_ttest(diffs)
        _, sw_p = shapiro_wilk(diffs) if len(diffs) >= 3 else (np.nan, np.nan)
        rows.append({
            "league": league, "n_seasons": len(diffs),
            "mean_diff": float(np.mean(diffs)), "t": t, "p": p,
            "ci_lo": ci[0], "ci_hi": ci[1], "shapiro_p": sw_p,
        })
    table = pd.DataFrame(rows)
    table["holm_p"] = holm_adjust(table["p"])
    return table


def write_forecast_csv(path, evals: list[ForecastEval]):
    frame = pd.DataFrame([{
        "league": ev.league, "season": ev.season,
        "rmse_actual": ev.rmse_actual, "rmse_adjusted": ev.rmse_adjusted,
        "diff": ev.diff,
    } for ev in evals])
    frame.to_csv(path, index=False, float_format="%.10g")
