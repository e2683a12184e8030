"""Minute-by-minute match data: records, parsers, odds conversion, binning.

The canonical modeling record is one team-minute row (`MinuteObservation`):
context covariates at the start of the minute plus event counts within the
minute. Raw inputs are either a minute CSV already in that layout, or a
simplified per-game commentary stream plus prematch odds, which are parsed
to `MatchEvent`s and aggregated.

All record types are frozen dataclasses and safe to share across threads.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import pandas as pd

from .errors import ConsistencyError, SchemaError

LEAGUES = ("ENG", "FRA", "GER", "ITA", "SPA")

MINUTE_CSV_COLUMNS = [
    "game_id", "team", "opponent", "home", "season", "league",
    "half", "minute", "score_diff", "red_card_diff", "win_prob_diff",
    "shots", "corners",
]

RESULTS_CSV_COLUMNS = [
    "game_id", "league", "season", "date_index",
    "home_team", "away_team", "home_goals", "away_goals",
]

EVENT_KINDS = (
    "goal", "shot_attempt", "corner", "red_card", "yellow_card",
    "game_start", "half_start", "game_end",
)


@dataclass(frozen=True)
class MinuteObservation:
    """One team-minute row. Diffs reflect state at the START of the minute."""

    game_id: str
    team: str
    opponent: str
    home: bool
    season: str
    league: str
    half: int
    minute: int
    score_diff: int
    red_card_diff: int
    win_prob_diff: float
    shots: int
    corners: int


@dataclass(frozen=True)
class MatchEvent:
    game_id: str
    half: int
    minute: int
    event_kind: str
    team: str | None


@dataclass(frozen=True)
class OddsTriple:
    """Decimal odds for home win / draw / away win. All must exceed 1.0."""

    home_odds: float
    draw_odds: float
    away_odds: float

    def __post_init__(self):
        for name in ("home_odds", "draw_odds", "away_odds"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 1.0):
                raise ValueError(f"{name} must be finite and > 1.0, got {v}")


@dataclass(frozen=True)
class BinningPolicy:
    """Caps used to clamp extreme covariate values before modeling."""

    score_cap: int = 3
    red_card_cap: int = 2
    minute_cap: int = 45

    def __post_init__(self):
        if min(self.score_cap, self.red_card_cap, self.minute_cap) < 1:
            raise ValueError("all binning caps must be positive")


@dataclass(frozen=True)
class GameResult:
    """Per-game descriptor: fixture, final score and season ordering index."""

    game_id: str
    league: str
    season: str
    home_team: str
    away_team: str
    home_goals: int
    away_goals: int
    date_index: int = 0


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


@dataclass
class ParseResult:
    """Parsed observations plus per-row violations (never raised eagerly)."""

    observations: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def raise_if_errors(self):
        if self.errors:
            first = self.errors[0]
            raise SchemaError(
                f"{len(self.errors)} invalid rows; first at line "
                f"{first.line}: {first.message}"
            )
        return self


@dataclass
class CommentaryResult:
    """Events in document order plus skipped-line and attribution records."""

    events: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    unattributed: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Minute CSV
# ---------------------------------------------------------------------------

def _parse_int(value: str, name: str):
    try:
        return int(value)
    except ValueError:
        raise ValueError(f"{name} must be an integer, got {value!r}") from None


def parse_minute_csv(path) -> ParseResult:
    """Parse a minute CSV into `MinuteObservation`s.

    The header must match `MINUTE_CSV_COLUMNS` exactly; a mismatch raises
    `SchemaError` naming the missing column. Type and range violations are
    collected per row (with the 1-based file line number) instead of
    aborting the parse.
    """
    path = Path(path)
    result = ParseResult()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected header row")
        if header != MINUTE_CSV_COLUMNS:
            missing = [c for c in MINUTE_CSV_COLUMNS if c not in header]
            if missing:
                raise SchemaError(f"{path}: missing column {missing[0]!r}")
            raise SchemaError(
                f"{path}: header mismatch, expected {MINUTE_CSV_COLUMNS}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                result.observations.append(_minute_row(row, lineno))
            except ValueError as exc:
                result.errors.append(RowError(lineno, str(exc)))
    return result


def _minute_row(row: Sequence[str], lineno: int) -> MinuteObservation:
    if len(row) != len(MINUTE_CSV_COLUMNS):
        raise ValueError(
            f"expected {len(MINUTE_CSV_COLUMNS)} fields, got {len(row)}"
        )
    (game_id, team, opponent, home, season, league, half, minute,
     score_diff, red_card_diff, win_prob_diff, shots, corners) = row

    if home not in ("0", "1"):
        raise ValueError(f"home must be 0 or 1, got {home!r}")
    if league not in LEAGUES:
        raise ValueError(f"unknown league code {league!r}")
    half_i = _parse_int(half, "half")
    if half_i not in (1, 2):
        raise ValueError(f"half must be 1 or 2, got {half_i}")
    minute_i = _parse_int(minute, "minute")
    if minute_i < 1:
        raise ValueError("minute must be ≥ 1")
    shots_i = _parse_int(shots, "shots")
    corners_i = _parse_int(corners, "corners")
    if shots_i < 0:
        raise ValueError("shots must be ≥ 0")
    if corners_i < 0:
        raise ValueError("corners must be ≥ 0")
    wpd = float(win_prob_diff)
    if not -1.0 <= wpd <= 1.0:
        raise ValueError(f"win_prob_diff must be in [-1, 1], got {wpd}")

    return MinuteObservation(
        game_id=game_id, team=team, opponent=opponent, home=home == "1",
        season=season, league=league, half=half_i, minute=minute_i,
        score_diff=_parse_int(score_diff, "score_diff"),
        red_card_diff=_parse_int(red_card_diff, "red_card_diff"),
        win_prob_diff=wpd, shots=shots_i, corners=corners_i,
    )


def write_minute_csv(path, observations: Iterable[MinuteObservation]):
    """Write observations in the canonical minute CSV schema (deterministic)."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MINUTE_CSV_COLUMNS)
        for o in observations:
            writer.writerow([
                o.game_id, o.team, o.opponent, int(o.home), o.season,
                o.league, o.half, o.minute, o.score_diff, o.red_card_diff,
                format(o.win_prob_diff, ".6g"), o.shots, o.corners,
            ])


# ---------------------------------------------------------------------------
# Commentary
# ---------------------------------------------------------------------------

_EVENT_PHRASES = {
    "Shot attempt": "shot_attempt",
    "Corner": "corner",
    "Goal scored": "goal",
    "Red card": "red_card",
    "Yellow card": "yellow_card",
}

_EVENT_RE = re.compile(
    r"^(?P<base>\d+)(?:\+(?P<extra>\d+))?'\s+(?P<phrase>"
    + "|".join(_EVENT_PHRASES)
    + r")\s+by\s+(?P<team>.+?)\s*$"
)


def parse_commentary(lines, home_team: str, away_team: str,
                     game_id: str = "") -> CommentaryResult:
    """Parse a simplified commentary stream into `MatchEvent`s.

    One event per line: ``<minute>' <EventPhrase> by <TeamName>`` with extra
    time written ``45+<k>'`` (stored as minute 45+k). Control lines are
    "First half begins", "Second half begins" and "Game ends". Out-of-order
    minutes are repaired by clamping to the running maximum within the half;
    a "Game ends" line is assigned the final observed minute of its half, so
    a stray one at the start of a half is relocated without dropping
    anything. Unparseable lines are skipped and counted; events naming
    neither team are kept with ``team=None`` and recorded in
    ``unattributed``.
    """
    result = CommentaryResult()
    current_half = 1
    running_max = {1: 0, 2: 0}
    pending_game_end: list[int] = []  # indices into result.events
    max_seen = {1: 0, 2: 0}

    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line == "First half begins":
            current_half = 1
            result.events.append(MatchEvent(game_id, 1, 1, "game_start", None))
            continue
        if line == "Second half begins":
            current_half = 2
            result.events.append(MatchEvent(game_id, 2, 1, "half_start", None))
            continue
        if line == "Game ends":
            # Minute is unknown until the half is fully read; patch later.
            result.events.append(
                MatchEvent(game_id, current_half, 1, "game_end", None))
            pending_game_end.append(len(result.events) - 1)
            continue
        m = _EVENT_RE.match(line)
        if m is None:
            result.warnings.append(RowError(lineno, f"unparseable line: {line!r}"))
            continue
        minute = int(m.group("base")) + int(m.group("extra") or 0)
        # Monotonic repair: never allow the clock to run backwards.
        minute = max(minute, running_max[current_half])
        running_max[current_half] = minute
        max_seen[current_half] = max(max_seen[current_half], minute)
        team = m.group("team")
        if team not in (home_team, away_team):
            result.unattributed.append(
                RowError(lineno, f"event names neither team: {team!r}"))
            team = None
        result.events.append(MatchEvent(
            game_id, current_half, minute, _EVENT_PHRASES[m.group("phrase")],
            team))

    for idx in pending_game_end:
        ev = result.events[idx]
        final_minute = max_seen[ev.half] or 45
        result.events[idx] = replace(ev, minute=final_minute)
    return result


# ---------------------------------------------------------------------------
# Events -> minute rows
# ---------------------------------------------------------------------------

def events_to_minutes(events: Sequence[MatchEvent], odds: OddsTriple,
                      result: GameResult) -> list[MinuteObservation]:
    """Aggregate repaired events into team-minute rows for both teams.

    Score and red-card differentials reflect the state at the START of each
    minute: a goal in minute m first affects minute m+1 (and carries across
    the half-time break). Each half runs from minute 1 to the larger of 45
    and the last event minute observed in it. Raises `ConsistencyError`
    when the goal events contradict the reported final score.
    """
    home, away = result.home_team, result.away_team
    p_home, _, p_away = odds_to_win_prob(odds)
    wpd_home = p_home - p_away

    by_half: dict[int, list[MatchEvent]] = {1: [], 2: []}
    for ev in events:
        if ev.event_kind in ("game_start", "half_start", "game_end"):
            continue
        if ev.team is None:
            continue
        by_half[ev.half].append(ev)

    goals = {home: 0, away: 0}
    reds = {home: 0, away: 0}
    rows: list[MinuteObservation] = []

    for half in (1, 2):
        half_events = by_half[half]
        n_minutes = max([45] + [ev.minute for ev in half_events])
        counts: dict[int, dict[str, dict[str, int]]] = {}
        for ev in half_events:
            per_min = counts.setdefault(
                ev.minute,
                {home: {"shots": 0, "corners": 0},
                 away: {"shots": 0, "corners": 0}})
            if ev.event_kind == "shot_attempt":
                per_min[ev.team]["shots"] += 1
            elif ev.event_kind == "corner":
                per_min[ev.team]["corners"] += 1

        deferred = {m: [] for m in range(1, n_minutes + 1)}
        for ev in half_events:
            if ev.event_kind in ("goal", "red_card"):
                deferred[ev.minute].append(ev)

        for minute in range(1, n_minutes + 1):
            sd = goals[home] - goals[away]
            rd = reds[home] - reds[away]
            c = counts.get(
                minute,
                {home: {"shots": 0, "corners": 0},
                 away: {"shots": 0, "corners": 0}})
            for team, opp, is_home in ((home, away, True), (away, home, False)):
                sign = 1 if is_home else -1
                rows.append(MinuteObservation(
                    game_id=result.game_id, team=team, opponent=opp,
                    home=is_home, season=result.season, league=result.league,
                    half=half, minute=minute,
                    score_diff=sign * sd, red_card_diff=sign * rd,
                    win_prob_diff=sign * wpd_home,
                    shots=c[team]["shots"], corners=c[team]["corners"]))
            # State changes in minute m take effect from minute m+1 on.
            for ev in deferred[minute]:
                if ev.event_kind == "goal":
                    goals[ev.team] += 1
                else:
                    reds[ev.team] += 1

    if (goals[home], goals[away]) != (result.home_goals, result.away_goals):
        raise ConsistencyError(
            f"game {result.game_id}: goal events give "
            f"{goals[home]}-{goals[away]} but reported final score is "
            f"{result.home_goals}-{result.away_goals}")
    return rows


# ---------------------------------------------------------------------------
# Odds
# ---------------------------------------------------------------------------

def odds_to_win_prob(odds: OddsTriple) -> tuple[float, float, float]:
    """Convert decimal odds to win probabilities.

    Inverse odds are normalized proportionally so the three probabilities
    sum to one; this removes the bookmaker overround without any tuning
    parameter.
    """
    inv = (1.0 / odds.home_odds, 1.0 / odds.draw_odds, 1.0 / odds.away_odds)
    total = sum(inv)
    return inv[0] / total, inv[1] / total, inv[2] / total


def parse_odds_csv(path) -> dict[str, OddsTriple]:
    """Read ``game_id,home_odds,draw_odds,away_odds`` rows into a mapping."""
    out: dict[str, OddsTriple] = {}
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"game_id", "home_odds", "draw_odds", "away_odds"}
        if reader.fieldnames is None or set(reader.fieldnames) != expected:
            raise SchemaError(f"{path}: expected columns {sorted(expected)}")
        for row in reader:
            out[row["game_id"]] = OddsTriple(
                float(row["home_odds"]), float(row["draw_odds"]),
                float(row["away_odds"]))
    return out


# ---------------------------------------------------------------------------
# Binning
# ---------------------------------------------------------------------------

def apply_binning(obs: MinuteObservation,
                  policy: BinningPolicy = BinningPolicy()) -> MinuteObservation:
    """Clamp extreme covariate values to the policy caps (idempotent)."""
    return replace(
        obs,
        score_diff=_clamp(obs.score_diff, policy.score_cap),
        red_card_diff=_clamp(obs.red_card_diff, policy.red_card_cap),
        minute=min(obs.minute, policy.minute_cap),
    )


def _clamp(value: int, cap: int) -> int:
    return max(-cap, min(cap, value))


def bin_frame(frame: pd.DataFrame,
              policy: BinningPolicy = BinningPolicy()) -> pd.DataFrame:
    """Vectorized `apply_binning` over a modeling frame."""
    out = frame.copy()
    out["score_diff"] = out["score_diff"].clip(-policy.score_cap,
                                               policy.score_cap)
    out["red_card_diff"] = out["red_card_diff"].clip(-policy.red_card_cap,
                                                     policy.red_card_cap)
    out["minute"] = out["minute"].clip(upper=policy.minute_cap)
    return out


# ---------------------------------------------------------------------------
# Frames and dataset bundle
# ---------------------------------------------------------------------------

def minutes_to_frame(observations: Sequence[MinuteObservation]) -> pd.DataFrame:
    """Build the modeling frame; adds the `away` dummy (home is baseline)."""
    frame = pd.DataFrame([{
        "game_id": o.game_id, "team": o.team, "opponent": o.opponent,
        "home": int(o.home), "season": o.season, "league": o.league,
        "half": o.half, "minute": o.minute, "score_diff": o.score_diff,
        "red_card_diff": o.red_card_diff, "win_prob_diff": o.win_prob_diff,
        "shots": o.shots, "corners": o.corners,
    } for o in observations])
    frame["away"] = 1 - frame["home"]
    return frame


def frame_with_away(frame: pd.DataFrame) -> pd.DataFrame:
    """Ensure the `away` dummy column exists on an externally built frame."""
    if "away" not in frame.columns:
        frame = frame.copy()
        frame["away"] = 1 - frame["home"]
    return frame


@dataclass
class MatchDataset:
    """Minute rows plus per-game results for one or more league-seasons."""

    minutes: pd.DataFrame
    results: list[GameResult]

    @classmethod
    def from_observations(cls, observations, results):
        return cls(minutes_to_frame(observations), list(results))

    def results_frame(self) -> pd.DataFrame:
        return pd.DataFrame([{
            "game_id": r.game_id, "league": r.league, "season": r.season,
            "date_index": r.date_index, "home_team": r.home_team,
            "away_team": r.away_team, "home_goals": r.home_goals,
            "away_goals": r.away_goals,
        } for r in self.results])


def write_results_csv(path, results: Sequence[GameResult]):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULTS_CSV_COLUMNS)
        for r in results:
            writer.writerow([
                r.game_id, r.league, r.season, r.date_index, r.home_team,
                r.away_team, r.home_goals, r.away_goals,
            ])


def parse_results_csv(path) -> list[GameResult]:
    out: list[GameResult] = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULTS_CSV_COLUMNS:
            raise SchemaError(f"{path}: expected columns {RESULTS_CSV_COLUMNS}")
        for row in reader:
            out.append(GameResult(
                game_id=row["game_id"], league=row["league"],
                season=row["season"], date_index=int(row["date_index"]),
                home_team=row["home_team"], away_team=row["away_team"],
                home_goals=int(row["home_goals"]),
                away_goals=int(row["away_goals"])))
    return out
