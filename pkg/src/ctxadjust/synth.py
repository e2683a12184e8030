"""Synthetic league generator with fully known ground truth.

Simulates minute-by-minute team production from configurable context
effects on the log scale, so fitted models, diagnostics, significance
tests, adjustment tables and forecasts can all be checked against exact
targets. Games are generated on independent RNG streams keyed by
(seed, fixture index), making output deterministic and order-independent.

Both teams of a game are simulated jointly: shots convert to goals with a
fixed probability and red cards arrive by a per-minute hazard, updating
the score and man-count state from the NEXT minute on (the same
minute-start convention the data layer uses).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .adjustment import AdjustmentTable, ContextCoefficient
from .data import BinningPolicy, GameResult, MatchDataset, minutes_to_frame


@dataclass(frozen=True)
class GeneratorConfig:
    """Ground-truth generative model for one synthetic league."""

    league: str = "ENG"
    teams: int = 16
    seasons: int = 1
    first_season_year: int = 2012
    games_per_season: int | None = None  # None: double round robin
    family: str = "poisson"              # poisson | negative_binomial | zip
    theta: float = 1.5
    zero_inflation: float = 0.25         # zip structural-zero probability

    base_log_rate: float = math.log(0.15)
    corner_base_log_rate: float = math.log(0.06)
    score_slope: float = -0.10
    score_curve: float = 0.0
    red_card_slope: float = -0.30
    wp_slope: float = 0.8
    minute_ramp: float = 0.15            # rise over first 5 minutes of a half
    second_half_lift: float = 0.05
    home_advantage: float = 0.10
    score_minute_interaction: float = 0.0

    strength_sd: float = 0.35
    team_attack_sd: float = 0.0
    goal_prob: float = 0.10
    red_card_hazard: float = 0.0005
    extra_time_max: int = 0
    policy: BinningPolicy = field(default_factory=BinningPolicy)

    def score_effect(self, s: float) -> float:
        s = float(np.clip(s, -self.policy.score_cap, self.policy.score_cap))
        return self.score_slope * s + self.score_curve * s * s

    def red_card_effect(self, rc: float) -> float:
        rc = float(np.clip(rc, -self.policy.red_card_cap,
                           self.policy.red_card_cap))
        return self.red_card_slope * rc

    def minute_effect(self, minute: int, half: int) -> float:
        m = min(minute, self.policy.minute_cap)
        ramp = self.minute_ramp * (min(m, 5) / 5.0 - 1.0)
        return ramp + (self.second_half_lift if half == 2 else 0.0)

    def wp_effect(self, wpd: float) -> float:
        return self.wp_slope * wpd

    def interaction_effect(self, s: float, minute: int, half: int) -> float:
        if self.score_minute_interaction == 0.0:
            return 0.0
        s = float(np.clip(s, -self.policy.score_cap, self.policy.score_cap))
        m = min(minute, self.policy.minute_cap)
        # Score effect strengthens late in each half, centered mid-half.
        return self.score_minute_interaction * s * ((m - 23.0) / 22.0)

    def true_eta(self, score_diff, red_card_diff, wpd, minute, half,
                 is_home, attack=0.0) -> float:
        return (self.base_log_rate + attack
                + self.score_effect(score_diff)
                + self.red_card_effect(red_card_diff)
                + self.wp_effect(wpd)
                + self.minute_effect(minute, half)
                + (self.home_advantage if is_home else 0.0)
                + self.interaction_effect(score_diff, minute, half))


@dataclass
class SimulatedLeague:
    dataset: MatchDataset
    truth: pd.DataFrame      # row_id, true_eta (count-component log mean)
    table: pd.DataFrame      # team, points, wins, draws, losses, goal_diff
    strengths: dict
    config: GeneratorConfig
    seed: int


def _team_names(n: int) -> list[str]:
    return [f"Team{chr(ord('A') + i)}" if i < 26 else f"Team{i}"
            for i in range(n)]


def _fixtures(teams: list[str], games: int | None, rng) -> list[tuple]:
    pairs = [(h, a) for h in teams for a in teams if h != a]
    order = rng.permutation(len(pairs))
    fixtures = [pairs[i] for i in order]
    if games is not None:
        fixtures = fixtures[:games]
    return fixtures


def _draw_counts(rng, mu, config: GeneratorConfig):
    if config.family == "poisson":
        return rng.poisson(mu)
    if config.family == "negative_binomial":
        p = config.theta / (config.theta + mu)
        return rng.negative_binomial(config.theta, p)
    if config.family == "zip":
        counts = rng.poisson(mu)
        if rng.random() < config.zero_inflation:
            return 0
        return counts
    raise ValueError(f"unknown family {config.family!r}")


def simulate_league(config: GeneratorConfig, seed: int) -> SimulatedLeague:
    """Simulate a full synthetic league; deterministic per seed."""
    teams = _team_names(config.teams)
    setup_rng = np.random.default_rng(np.random.SeedSequence((seed, 0xA11)))
    strengths = dict(zip(teams,
                         setup_rng.normal(0.0, config.strength_sd,
                                          config.teams)))
    attacks = dict(zip(teams,
                       setup_rng.normal(0.0, config.team_attack_sd,
                                        config.teams)
                       if config.team_attack_sd > 0
                       else np.zeros(config.teams)))

    observations = []
    truths = []
    results = []
    points = {t: {"points": 0, "wins": 0, "draws": 0, "losses": 0,
                  "goal_diff": 0} for t in teams}
    game_index = 0
    for season_i in range(config.seasons):
        year = config.first_season_year + season_i
        season = f"{year}/{str(year + 1)[-2:]}"
        fix_rng = np.random.default_rng(
            np.random.SeedSequence((seed, 0xF1, season_i)))
        fixtures = _fixtures(teams, config.games_per_season, fix_rng)
        for date_index, (home, away) in enumerate(fixtures):
            game_id = f"{config.league}-{year}-g{game_index:05d}"
            rng = np.random.default_rng(
                np.random.SeedSequence((seed, game_index)))
            obs, tru, result = _simulate_game(
                config, rng, game_id, season, home, away,
                strengths, attacks, date_index)
            observations.extend(obs)
            truths.extend(tru)
            results.append(result)
            hg, ag = result.home_goals, result.away_goals
            points[home]["goal_diff"] += hg - ag
            points[away]["goal_diff"] += ag - hg
            if hg > ag:
                points[home]["points"] += 3
                points[home]["wins"] += 1
                points[away]["losses"] += 1
            elif hg < ag:
                points[away]["points"] += 3
                points[away]["wins"] += 1
                points[home]["losses"] += 1
            else:
                for t in (home, away):
                    points[t]["points"] += 1
                    points[t]["draws"] += 1
            game_index += 1

    dataset = MatchDataset(minutes_to_frame(observations), results)
    truth = pd.DataFrame({"row_id": np.arange(len(truths)),
                          "true_eta": truths})
    table = pd.DataFrame([
        {"team": t, **points[t]} for t in teams
    ]).sort_values(["points", "goal_diff", "team"],
                   ascending=[False, False, True]).reset_index(drop=True)
    return SimulatedLeague(dataset, truth, table, strengths, config, seed)


def _simulate_game(config, rng, game_id, season, home, away, strengths,
                   attacks, date_index):
    from .data import MinuteObservation

    wpd_home = math.tanh(strengths[home] - strengths[away])
    goals = {home: 0, away: 0}
    reds = {home: 0, away: 0}
    observations = []
    truths = []
    for half in (1, 2):
        extra = int(rng.integers(0, config.extra_time_max + 1)) \
            if config.extra_time_max > 0 else 0
        for minute in range(1, 45 + extra + 1):
            sd_home = goals[home] - goals[away]
            rd_home = reds[home] - reds[away]
            pending = []
            for team, opp, is_home in ((home, away, True),
                                       (away, home, False)):
                sign = 1 if is_home else -1
                eta = config.true_eta(
                    sign * sd_home, sign * rd_home, sign * wpd_home,
                    minute, half, is_home, attacks[team])
                mu = math.exp(eta)
                shots = int(_draw_counts(rng, mu, config))
                corners_mu = mu * math.exp(config.corner_base_log_rate
                                           - config.base_log_rate)
                corners = int(_draw_counts(rng, corners_mu, config))
                new_goals = int(rng.binomial(shots, config.goal_prob)) \
                    if shots > 0 else 0
                new_red = 1 if rng.random() < config.red_card_hazard else 0
                pending.append((team, new_goals, new_red))
                observations.append(MinuteObservation(
                    game_id=game_id, team=team, opponent=opp, home=is_home,
                    season=season, league=config.league, half=half,
                    minute=minute, score_diff=sign * sd_home,
                    red_card_diff=sign * rd_home,
                    win_prob_diff=sign * wpd_home,
                    shots=shots, corners=corners))
                truths.append(eta)
            # Both teams drawn against the same start-of-minute state;
            # goals and cards apply from the next minute on.
            for team, new_goals, new_red in pending:
                goals[team] += new_goals
                reds[team] += new_red
    result = GameResult(
        game_id=game_id, league=config.league, season=season,
        home_team=home, away_team=away, home_goals=goals[home],
        away_goals=goals[away], date_index=date_index)
    return observations, truths, result


def true_adjustment_table(config: GeneratorConfig,
                          policy: BinningPolicy | None = None) -> AdjustmentTable:
    """Exact context coefficients implied by the generator's true effects."""
    policy = policy or config.policy

    def coef(delta: float) -> ContextCoefficient:
        c = math.exp(-delta)
        return ContextCoefficient(point=c, lo=c, hi=c, delta=delta)

    score = {
        s: coef(config.score_effect(s) - config.score_effect(0))
        for s in range(-policy.score_cap, policy.score_cap + 1)}
    redcard = {
        rc: coef(config.red_card_effect(rc) - config.red_card_effect(0))
        for rc in range(-policy.red_card_cap, policy.red_card_cap + 1)}
    away = coef(-config.home_advantage)
    return AdjustmentTable(score=score, redcard=redcard, away=away,
                           policy=policy, model_hash="truth")


def write_truth_csv(path, truth: pd.DataFrame):
    truth.to_csv(path, index=False, float_format="%.10g")
