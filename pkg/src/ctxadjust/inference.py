"""Significance testing for model terms with step-down multiple-testing
control.

Smooth terms use a Wald statistic on the term's fitted values: with f the
term's contribution and V_f its posterior covariance (restricted to the
term block), T = f' V_f^- f where the pseudo-inverse is truncated at rank
round(edf); T is referred to chi-square with that many degrees of
freedom. Dummy terms use the usual coefficient z-test. Batteries of
per-season tests are Holm-corrected per effect across league-seasons.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats

from .errors import FitError, TermError
from .gam import ContextGAM
from .terms import SmoothSpec


@dataclass
class TermTest:
    term: str
    statistic: float
    df: float
    raw_p: float
    holm_p: float | None = None
    league: str = ""
    season: str = ""
    flag: str = ""
    delta_aic: float | None = None
    delta_bic: float | None = None


def holm_adjust(p) -> np.ndarray:
    """Holm step-down adjustment, returned in the input order.

    adjusted_(i) = max_{j<=i} min(1, (m-j+1) * p_(j)) over the ascending
    order statistics.
    """
    p = np.asarray(p, dtype=float)
    if p.size == 0:
        return p.copy()
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = len(p)
    order = np.argsort(p, kind="stable")
    adjusted_sorted = np.minimum((m - np.arange(m)) * p[order], 1.0)
    adjusted_sorted = np.maximum.accumulate(adjusted_sorted)
    out = np.empty(m)
    out[order] = adjusted_sorted
    return out


def test_smooth_term(model: ContextGAM, term_name: str,
                     league: str = "", season: str = "") -> TermTest:
    """Wald-type test of one fitted term against zero."""
    design = model.design_
    term = design.term_by_name(term_name)
    span = design.spans[term_name]
    beta = model.coef_[span]
    V = model.posterior_cov_[span, span]

    if term.spec.kind == "dummy":
        se = float(np.sqrt(max(V[0, 0], 1e-300)))
        z = float(beta[0] / se)
        return TermTest(term_name, z, 1.0,
                        float(2.0 * stats.norm.sf(abs(z))),
                        league=league, season=season)

    edf = model.edf_by_term_[term_name]
    if edf < 0.5:
        return TermTest(term_name, 0.0, edf, 1.0, league=league,
                        season=season, flag="effectively-null")
    rank = int(np.clip(round(edf), 1, len(beta)))
    Xj = design.X_[:, span]
    _, R = np.linalg.qr(Xj)
    fr = R @ beta
    Vr = R @ V @ R.T
    eigval, eigvec = np.linalg.eigh(Vr)
    order = np.argsort(eigval)[::-1]
    eigval, eigvec = eigval[order], eigvec[:, order]
    keep = eigval[:rank] > max(eigval[0], 1e-300) * 1e-10
    rank = max(int(keep.sum()), 1)
    proj = eigvec[:, :rank].T @ fr
    T = float(np.sum(proj ** 2 / eigval[:rank]))
    return TermTest(term_name, T, float(rank),
                    float(stats.chi2.sf(T, rank)),
                    league=league, season=season)


def test_interaction(frame: pd.DataFrame, y, base_terms, pair,
                     family: str, k: int = 5, league: str = "",
                     season: str = "", **fit_kwargs) -> TermTest:
    """Add one pairwise tensor interaction to the baseline and test it.

    Also reports the AIC/BIC change against the baseline fit; significance
    calls use the Wald p-value.
    """
    c1, c2 = pair
    if c1 == c2:
        raise TermError("interaction of a covariate with itself")
    inter = SmoothSpec(c1, "tensor_interaction", k=k, covariate2=c2, k2=k)
    try:
        base = ContextGAM(terms=list(base_terms), family=family,
                          **fit_kwargs).fit(frame, y)
        full = ContextGAM(terms=list(base_terms) + [inter], family=family,
                          **fit_kwargs).fit(frame, y)
    except FitError as exc:
        return TermTest(inter.name, np.nan, np.nan, np.nan, league=league,
                        season=season, flag=f"failed: {exc}")
    result = test_smooth_term(full, inter.name, league=league, season=season)
    result.delta_aic = float(full.aic_ - base.aic_)
    result.delta_bic = float(full.bic_ - base.bic_)
    return result


def with_game_effect(terms) -> list[SmoothSpec]:
    """Swap the season random intercept for a per-game one."""
    out = [t for t in terms
           if not (t.kind == "random_effect" and t.covariate == "season")]
    out.append(SmoothSpec("game_id", "random_effect"))
    return out


def test_game_random_effect(frame: pd.DataFrame, y, terms, family: str,
                            league: str = "", season: str = "",
                            **fit_kwargs) -> TermTest:
    """Significance of a game-level random intercept within one season."""
    if frame["game_id"].nunique() < 2:
        raise ValueError("game-level effect test needs >= 2 games")
    game_terms = with_game_effect(terms)
    model = ContextGAM(terms=game_terms, family=family,
                       **fit_kwargs).fit(frame, y)
    return test_smooth_term(model, "re(game_id)", league=league,
                            season=season)


# ---------------------------------------------------------------------------
# Batteries
# ---------------------------------------------------------------------------

def run_factor_battery(frame: pd.DataFrame, stat: str, terms, family: str,
                       factor_terms: list[str] | None = None,
                       n_jobs: int = 1, **fit_kwargs) -> pd.DataFrame:
    """Per-(league, season) significance tests of the key factors.

    Fits each league-season separately with the supplied per-season term
    set (no season intercept) and Holm-corrects each effect across the
    league-season battery, the way a per-effect family of tests is read.
    """
    groups = sorted(frame.groupby(["league", "season"]).groups)

    def run_group(league, season):
        sub = frame[(frame["league"] == league) & (frame["season"] == season)]
        model = ContextGAM(terms=list(terms), family=family,
                           **fit_kwargs).fit(sub, sub[stat].to_numpy())
        names = factor_terms or [t.name for t in model.design_.terms]
        out = []
        for name in names:
            test = test_smooth_term(model, name, league=league, season=season)
            out.append({
                "league": league, "season": season, "term": name,
                "stat": test.statistic, "edf": model.edf_by_term_[name],
                "raw_p": test.raw_p,
            })
        return out

    rows = Parallel(n_jobs=n_jobs)(
        delayed(run_group)(lg, sn) for lg, sn in groups)
    table = pd.DataFrame([r for group in rows for r in group])
    table["holm_p"] = np.nan
    for term in table["term"].unique():
        mask = table["term"] == term
        table.loc[mask, "holm_p"] = holm_adjust(table.loc[mask, "raw_p"])
    return table


def run_interaction_battery(frame: pd.DataFrame, stat: str, base_terms,
                            family: str, pairs, k: int = 5, n_jobs: int = 1,
                            **fit_kwargs) -> pd.DataFrame:
    """Per-(league, season) pairwise interaction tests, Holm per pair."""
    groups = sorted(frame.groupby(["league", "season"]).groups)

    def run_group(league, season):
        sub = frame[(frame["league"] == league) & (frame["season"] == season)]
        y = sub[stat].to_numpy()
        out = []
        for pair in pairs:
            test = test_interaction(sub, y, base_terms, pair, family, k=k,
                                    league=league, season=season,
                                    **fit_kwargs)
            out.append({
                "league": league, "season": season, "term": test.term,
                "stat": test.statistic, "edf": test.df, "raw_p": test.raw_p,
                "delta_aic": test.delta_aic, "delta_bic": test.delta_bic,
                "flag": test.flag,
            })
        return out

    rows = Parallel(n_jobs=n_jobs)(
        delayed(run_group)(lg, sn) for lg, sn in groups)
    table = pd.DataFrame([r for group in rows for r in group])
    table["holm_p"] = np.nan
    for term in table["term"].unique():
        mask = (table["term"] == term) & table["raw_p"].notna()
        if mask.any():
            table.loc[mask, "holm_p"] = holm_adjust(table.loc[mask, "raw_p"])
    return table


def write_battery_csv(path, table: pd.DataFrame):
    cols = ["league", "season", "term", "stat", "edf", "raw_p", "holm_p"]
    extra = [c for c in table.columns if c not in cols]
    table[cols + extra].to_csv(path, index=False, float_format="%.6g")


def run_game_effect_battery(frame: pd.DataFrame, stat: str, terms,
                            family: str, n_jobs: int = 1,
                            **fit_kwargs) -> pd.DataFrame:
    """Game-level random-effect tests per league-season, Holm-corrected."""
    groups = sorted(frame.groupby(["league", "season"]).groups)

    def run_group(league, season):
        sub = frame[(frame["league"] == league) & (frame["season"] == season)]
        try:
            test = test_game_random_effect(sub, sub[stat].to_numpy(), terms,
                                           family, league=league,
                                           season=season, **fit_kwargs)
        except FitError as exc:
            warnings.warn(f"{league} {season}: {exc}", stacklevel=2)
            return None
        return {"league": league, "season": season, "term": test.term,
                "stat": test.statistic, "edf": test.df, "raw_p": test.raw_p}

    rows = Parallel(n_jobs=n_jobs)(
        delayed(run_group)(lg, sn) for lg, sn in groups)
    table = pd.DataFrame([r for r in rows if r is not None])
    if not table.empty:
        table["holm_p"] = holm_adjust(table["raw_p"])
    return table
