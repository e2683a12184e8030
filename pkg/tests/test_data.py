import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxadjust.data import (BinningPolicy, GameResult, MinuteObservation,
                            OddsTriple, apply_binning, events_to_minutes,
                            minutes_to_frame, odds_to_win_prob,
                            parse_commentary, parse_minute_csv,
                            parse_results_csv, write_minute_csv,
                            write_results_csv)
from ctxadjust.errors import ConsistencyError, SchemaError

GOLDEN = Path(__file__).parent / "data"

HEADER = ("game_id,team,opponent,home,season,league,half,minute,"
          "score_diff,red_card_diff,win_prob_diff,shots,corners")


def _write(tmp_path, text, name="m.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestParseMinuteCsv:
    def test_documented_row(self, tmp_path):
        path = _write(tmp_path,
                      HEADER + "\ng1,Arsenal,Chelsea,1,2012/13,ENG,1,10,0,0,0.12,1,0\n")
        result = parse_minute_csv(path)
        assert result.ok
        (obs,) = result.observations
        assert obs == MinuteObservation(
            game_id="g1", team="Arsenal", opponent="Chelsea", home=True,
            season="2012/13", league="ENG", half=1, minute=10, score_diff=0,
            red_card_diff=0, win_prob_diff=0.12, shots=1, corners=0)

    def test_empty_file_with_header(self, tmp_path):
        result = parse_minute_csv(_write(tmp_path, HEADER + "\n"))
        assert result.ok and result.observations == []

    def test_minute_zero_is_row_error(self, tmp_path):
        path = _write(tmp_path,
                      HEADER + "\ng1,A,B,1,2012/13,ENG,1,0,0,0,0.0,0,0\n")
        result = parse_minute_csv(path)
        assert not result.observations
        (err,) = result.errors
        assert err.line == 2
        assert "minute must be ≥ 1" in err.message

    def test_missing_column_names_it(self, tmp_path):
        bad = HEADER.replace(",corners", "")
        path = _write(tmp_path, bad + "\n")
        with pytest.raises(SchemaError, match="corners"):
            parse_minute_csv(path)

    def test_non_integer_count_has_line_number(self, tmp_path):
        path = _write(tmp_path, HEADER + "\n"
                      "g1,A,B,1,2012/13,ENG,1,1,0,0,0.0,1,0\n"
                      "g1,A,B,1,2012/13,ENG,1,2,0,0,0.0,x,0\n")
        result = parse_minute_csv(path)
        assert len(result.observations) == 1
        (err,) = result.errors
        assert err.line == 3 and "shots" in err.message

    def test_unknown_league(self, tmp_path):
        path = _write(tmp_path,
                      HEADER + "\ng1,A,B,1,2012/13,USA,1,1,0,0,0.0,0,0\n")
        result = parse_minute_csv(path)
        assert result.errors and "league" in result.errors[0].message

    def test_row_count_preserved(self, tmp_path):
        rows = "\n".join(
            f"g1,A,B,1,2012/13,ENG,1,{m},0,0,0.0,{m % 3},0"
            for m in range(1, 46))
        result = parse_minute_csv(_write(tmp_path, HEADER + "\n" + rows + "\n"))
        assert len(result.observations) == 45


class TestCommentary:
    def test_basic_event(self):
        parsed = parse_commentary(["First half begins",
                                   "12' Shot attempt by Arsenal"],
                                  "Arsenal", "Chelsea")
        event = parsed.events[-1]
        assert (event.minute, event.half, event.event_kind, event.team) == \
            (12, 1, "shot_attempt", "Arsenal")

    def test_extra_time_notation(self):
        parsed = parse_commentary(["45+3' Corner by Arsenal"],
                                  "Arsenal", "Chelsea")
        assert parsed.events[0].minute == 48

    def test_monotonic_repair(self):
        lines = ["Second half begins",
                 "50' Shot attempt by A",
                 "47' Corner by B",
                 "51' Shot attempt by A"]
        parsed = parse_commentary(lines, "A", "B")
        minutes = [e.minute for e in parsed.events
                   if e.event_kind != "half_start"]
        assert minutes == [50, 50, 51]

    def test_game_end_at_half_start_relocated(self):
        lines = ["Second half begins",
                 "Game ends",
                 "2' Shot attempt by A",
                 "44' Corner by B"]
        parsed = parse_commentary(lines, "A", "B")
        game_end = [e for e in parsed.events if e.event_kind == "game_end"]
        assert len(game_end) == 1 and game_end[0].minute == 44
        # zero events dropped
        assert len(parsed.events) == 4

    def test_unparseable_line_counted(self):
        parsed = parse_commentary(["gibberish line", "3' Corner by A"],
                                  "A", "B")
        assert len(parsed.warnings) == 1
        assert len(parsed.events) == 1

    def test_unattributed_event_kept(self):
        parsed = parse_commentary(["3' Goal scored by Nobody"], "A", "B")
        assert parsed.events[0].team is None
        assert len(parsed.unattributed) == 1

    def test_never_drops_events(self):
        lines = ["First half begins", "1' Corner by A", "junk",
                 "9' Shot attempt by B", "4' Yellow card by Q",
                 "Game ends"]
        parsed = parse_commentary(lines, "A", "B")
        parseable = 5  # all but "junk"
        assert len(parsed.events) + len(parsed.warnings) == 6
        assert len(parsed.events) == parseable


def _odds():
    return OddsTriple(2.0, 4.0, 4.0)


def _result(home_goals=0, away_goals=0):
    return GameResult(game_id="g1", league="ENG", season="2012/13",
                      home_team="H", away_team="A", home_goals=home_goals,
                      away_goals=away_goals)


def _events(spec):
    from ctxadjust.data import MatchEvent
    return [MatchEvent("g1", half, minute, kind, team)
            for half, minute, kind, team in spec]


class TestEventsToMinutes:
    def test_goal_step_function(self):
        events = _events([(1, 30, "goal", "H")])
        rows = events_to_minutes(events, _odds(), _result(home_goals=1))
        home = [r for r in rows if r.team == "H"]
        by_key = {(r.half, r.minute): r.score_diff for r in home}
        assert by_key[(1, 30)] == 0
        assert by_key[(1, 31)] == 1
        assert by_key[(2, 1)] == 1

    def test_no_events_gives_180_zero_rows(self):
        rows = events_to_minutes([], _odds(), _result())
        assert len(rows) == 180
        assert all(r.shots == 0 and r.corners == 0 and r.score_diff == 0
                   for r in rows)

    def test_away_red_cards_sign(self):
        events = _events([(1, 10, "red_card", "A"), (1, 20, "red_card", "A")])
        rows = events_to_minutes(events, _odds(), _result())
        home = {(r.half, r.minute): r.red_card_diff
                for r in rows if r.team == "H"}
        assert home[(1, 20)] == -1
        assert home[(1, 21)] == -2
        assert home[(2, 45)] == -2

    def test_round_trip_tallies(self):
        events = _events([
            (1, 3, "shot_attempt", "H"), (1, 3, "shot_attempt", "H"),
            (1, 8, "corner", "A"), (2, 44, "shot_attempt", "A"),
            (2, 10, "goal", "A"),
        ])
        rows = events_to_minutes(events, _odds(), _result(away_goals=1))
        assert sum(r.shots for r in rows if r.team == "H") == 2
        assert sum(r.shots for r in rows if r.team == "A") == 1
        assert sum(r.corners for r in rows if r.team == "A") == 1

    def test_antisymmetry(self):
        events = _events([(1, 5, "goal", "H"), (2, 9, "red_card", "A")])
        rows = events_to_minutes(events, _odds(), _result(home_goals=1))
        by_minute = {}
        for r in rows:
            by_minute.setdefault((r.half, r.minute), []).append(r)
        for pair in by_minute.values():
            a, b = pair
            assert a.score_diff == -b.score_diff
            assert a.red_card_diff == -b.red_card_diff
            assert a.win_prob_diff == -b.win_prob_diff
            assert a.home != b.home

    def test_inconsistent_final_score(self):
        events = _events([(1, 5, "goal", "H")])
        with pytest.raises(ConsistencyError):
            events_to_minutes(events, _odds(), _result(home_goals=2))

    def test_win_prob_diff_from_odds(self):
        rows = events_to_minutes([], _odds(), _result())
        home = next(r for r in rows if r.team == "H")
        assert home.win_prob_diff == pytest.approx(0.5 - 0.25)


class TestOdds:
    def test_exact_inverse(self):
        assert odds_to_win_prob(_odds()) == pytest.approx((0.5, 0.25, 0.25))

    def test_overround_normalized(self):
        p = odds_to_win_prob(OddsTriple(1.8, 3.6, 3.6))
        assert p == pytest.approx((0.5, 0.25, 0.25))

    def test_bad_odds_rejected(self):
        with pytest.raises(ValueError):
            OddsTriple(1.0, 4.0, 4.0)

    @given(st.floats(1.01, 50.0))
    def test_symmetric_odds(self, x):
        p = odds_to_win_prob(OddsTriple(x, x, x))
        assert p == pytest.approx((1 / 3, 1 / 3, 1 / 3))

    @given(st.floats(1.05, 30.0), st.floats(1.05, 30.0),
           st.floats(1.05, 30.0))
    def test_sums_to_one(self, h, d, a):
        assert abs(sum(odds_to_win_prob(OddsTriple(h, d, a))) - 1.0) < 1e-12

    @given(st.floats(2.0, 30.0), st.floats(2.0, 30.0),
           st.floats(2.0, 30.0), st.floats(0.6, 1.9))
    def test_scale_invariance(self, h, d, a, c):
        # scaling all implied probabilities by 1/c leaves the output fixed
        base = odds_to_win_prob(OddsTriple(h, d, a))
        scaled = odds_to_win_prob(OddsTriple(h / c, d / c, a / c))
        assert base == pytest.approx(scaled, abs=1e-12)


def _obs(**kw):
    base = dict(game_id="g", team="A", opponent="B", home=True,
                season="2012/13", league="ENG", half=1, minute=10,
                score_diff=0, red_card_diff=0, win_prob_diff=0.0, shots=0,
                corners=0)
    base.update(kw)
    return MinuteObservation(**base)


class TestBinning:
    def test_score_five_to_three(self):
        assert apply_binning(_obs(score_diff=5)).score_diff == 3

    def test_score_minus_four(self):
        assert apply_binning(_obs(score_diff=-4)).score_diff == -3

    def test_red_card_three_to_two(self):
        assert apply_binning(_obs(red_card_diff=3)).red_card_diff == 2
        assert apply_binning(_obs(red_card_diff=-3)).red_card_diff == -2

    def test_red_card_at_cap_unchanged(self):
        assert apply_binning(_obs(red_card_diff=-2)).red_card_diff == -2

    def test_minute_49_to_45(self):
        assert apply_binning(_obs(minute=49)).minute == 45

    @given(st.integers(-8, 8), st.integers(-4, 4), st.integers(1, 60))
    def test_idempotent(self, sd, rc, minute):
        policy = BinningPolicy()
        once = apply_binning(_obs(score_diff=sd, red_card_diff=rc,
                                  minute=minute), policy)
        assert apply_binning(once, policy) == once

    def test_other_fields_unchanged(self):
        obs = _obs(score_diff=9, shots=4, corners=2)
        binned = apply_binning(obs)
        assert binned == replace(obs, score_diff=3)


class TestGoldenFiles:
    def test_minute_csv_byte_stable(self, tmp_path):
        observations = [
            _obs(minute=1, shots=1, win_prob_diff=0.25),
            _obs(minute=2, corners=1, score_diff=-1, win_prob_diff=0.25),
            _obs(team="B", opponent="A", home=False, minute=1,
                 win_prob_diff=-0.25),
        ]
        out = tmp_path / "golden.csv"
        write_minute_csv(out, observations)
        assert out.read_bytes() == (GOLDEN / "minutes_golden.csv").read_bytes()

    def test_minute_csv_round_trip(self, tmp_path):
        observations = [_obs(minute=m, shots=m % 2) for m in range(1, 20)]
        path = tmp_path / "rt.csv"
        write_minute_csv(path, observations)
        parsed = parse_minute_csv(path)
        assert parsed.ok and parsed.observations == observations

    def test_results_csv_round_trip(self, tmp_path):
        results = [GameResult("g1", "ENG", "2012/13", "H", "A", 2, 1, 0),
                   GameResult("g2", "ENG", "2012/13", "A", "H", 0, 0, 1)]
        path = tmp_path / "r.csv"
        write_results_csv(path, results)
        assert parse_results_csv(path) == results
        assert path.read_bytes() == (GOLDEN / "results_golden.csv").read_bytes()


def test_minutes_to_frame_has_away_dummy():
    frame = minutes_to_frame([_obs(), _obs(team="B", home=False)])
    assert frame["away"].tolist() == [0, 1]


def test_simulated_league_satisfies_data_invariants(small_league):
    frame = small_league.dataset.minutes
    grouped = frame.groupby(["game_id", "half", "minute"])
    for col in ("score_diff", "red_card_diff", "win_prob_diff"):
        assert grouped[col].sum().abs().max() == 0
    assert grouped["home"].sum().eq(1).all()
