import numpy as np
import pytest

from ctxadjust.data import BinningPolicy
from ctxadjust.synth import GeneratorConfig, simulate_league
from ctxadjust.terms import SmoothSpec


def sim_terms(frame, include_team=True, include_season=False, minute_k=6,
              wp_k=6):
    """Term set matched to the synthetic generator's covariates."""
    terms = [
        SmoothSpec("score_diff", "penalized_cubic", k=7),
        SmoothSpec("red_card_diff", "penalized_cubic",
                   k=min(5, frame["red_card_diff"].clip(-2, 2).nunique())),
        SmoothSpec("win_prob_diff", "penalized_cubic", k=wp_k),
        SmoothSpec("minute", "penalized_cubic", k=minute_k,
                   by="half", by_level=1),
        SmoothSpec("minute", "penalized_cubic", k=minute_k,
                   by="half", by_level=2),
        SmoothSpec("away", "dummy"),
    ]
    if frame["red_card_diff"].nunique() < 3:
        terms = [t for t in terms if t.covariate != "red_card_diff"]
    if include_team:
        terms.append(SmoothSpec("team", "random_effect"))
    if include_season:
        terms.append(SmoothSpec("season", "random_effect"))
    return terms


@pytest.fixture(scope="session")
def small_league():
    config = GeneratorConfig(teams=8, seasons=1, red_card_hazard=0.002,
                             strength_sd=0.4)
    return simulate_league(config, seed=3)


@pytest.fixture(scope="session")
def small_frame(small_league):
    return small_league.dataset.minutes


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def policy():
    return BinningPolicy()
