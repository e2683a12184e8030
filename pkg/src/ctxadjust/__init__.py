"""Context adjustment of soccer offensive statistics.

Fits count-response additive models with penalized spline terms to
minute-by-minute match data, diagnoses and selects the response family,
tests contextual factors, and projects raw shot and corner counts onto a
tied, even-strength home baseline with confidence intervals.
"""

from .data import (BinningPolicy, GameResult, MatchDataset, MatchEvent,
                   MinuteObservation, OddsTriple, apply_binning, bin_frame,
                   events_to_minutes, minutes_to_frame, odds_to_win_prob,
                   parse_commentary, parse_minute_csv)
from .gam import ContextGAM, LambdaSearch
from .terms import ModelSpec, SmoothSpec, default_terms

__all__ = [
    "BinningPolicy", "ContextGAM", "GameResult", "LambdaSearch",
    "MatchDataset", "MatchEvent", "MinuteObservation", "ModelSpec",
    "OddsTriple", "SmoothSpec", "apply_binning", "bin_frame",
    "default_terms", "events_to_minutes", "minutes_to_frame",
    "odds_to_win_prob", "parse_commentary", "parse_minute_csv",
]

__version__ = "0.1.0"
