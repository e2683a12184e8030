"""Simulation-based residual diagnostics, cross-validation, calibration.

Quantile residuals are computed by ranking each observation within
simulations from the fitted model (Dunn & Smyth 1996 style, randomized at
ties); under a correct model they are marginally uniform on [0, 1].
Dispersion and zero-inflation use two-sided Monte-Carlo p-values against
the simulated reference distribution; outliers use a binomial test on the
extreme residual bins.

Cross-validation is leave-one-season-out: each fold refits on the other
seasons and predicts the held-out one at population level (the held-out
season's random-intercept level is unseen, so its contribution is zero).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats

from .errors import FitError
from .gam import ContextGAM, simulate_from_fit

BUCKET_WIDTH = 0.01
LOW_SUPPORT_N = 100


@dataclass
class SimulatedResiduals:
    residuals: np.ndarray
    n_sim: int
    seed: int


@dataclass
class ResidualSimulation:
    """One simulation pass: residuals plus the per-simulation statistics."""

    residuals: np.ndarray
    pearson_sim: np.ndarray
    zeros_sim: np.ndarray
    pearson_obs: float
    zeros_obs: int
    n_sim: int
    seed: int


@dataclass
class DiagnosticsReport:
    ks_p: float
    dispersion_p: float
    zero_inflation_p: float
    outlier_p: float
    aic: float
    bic: float
    n_sim: int
    seed: int
    family: str = ""
    label: str = ""
    ks_p_holm: float | None = None
    dispersion_p_holm: float | None = None
    zero_inflation_p_holm: float | None = None
    outlier_p_holm: float | None = None

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}


def _model_mean_and_variance(model: ContextGAM):
    kind = model.family_.kind
    if kind == "zip":
        rate = model.fitted_rate_
        var = rate * (1.0 + model.pi_ * model.mu_)
        return rate, var
    mu = model.mu_
    if kind in ("gaussian_identity", "gaussian_log"):
        return mu, np.full_like(mu, model.dispersion_)
    if kind == "negative_binomial":
        return mu, mu + mu ** 2 / model.theta_
    return mu, mu.copy()


def run_simulation(model: ContextGAM, y, n_sim: int = 250,
                   seed: int = 0) -> ResidualSimulation:
    """Simulate from the fitted model and rank the observations.

    Residual_i = (#{sim < y_i} + U * (#{sim == y_i} + 1)) / (n_sim + 1)
    with U ~ Uniform(0,1) breaking ties; deterministic given the seed.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n < 30:
        warnings.warn("fewer than 30 observations; diagnostic tests are "
                      "unreliable", stacklevel=2)
    center, variance = _model_mean_and_variance(model)
    rng = np.random.default_rng(seed)
    lt = np.zeros(n)
    eq = np.zeros(n)
    pearson_sim = np.empty(n_sim)
    zeros_sim = np.empty(n_sim, dtype=int)
    for start, draws in simulate_from_fit(model, rng, n_sim):
        lt += np.sum(draws < y, axis=0)
        eq += np.sum(draws == y, axis=0)
        resid2 = (draws - center) ** 2 / variance
        pearson_sim[start:start + len(draws)] = resid2.sum(axis=1)
        zeros_sim[start:start + len(draws)] = np.sum(draws == 0, axis=1)
    u = rng.random(n)
    residuals = (lt + u * (eq + 1.0)) / (n_sim + 1.0)
    pearson_obs = float(np.sum((y - center) ** 2 / variance))
    return ResidualSimulation(residuals, pearson_sim, zeros_sim, pearson_obs,
                              int(np.sum(y == 0)), n_sim, seed)


def simulate_residuals(model: ContextGAM, y, n_sim: int = 250,
                       seed: int = 0) -> SimulatedResiduals:
    sim = run_simulation(model, y, n_sim=n_sim, seed=seed)
    return SimulatedResiduals(sim.residuals, n_sim, seed)


def _mc_two_sided(observed: float, simulated: np.ndarray) -> float:
    n_sim = len(simulated)
    p_low = (1.0 + np.sum(simulated <= observed)) / (n_sim + 1.0)
    p_high = (1.0 + np.sum(simulated >= observed)) / (n_sim + 1.0)
    return float(min(1.0, 2.0 * min(p_low, p_high)))


def test_uniformity(res: SimulatedResiduals) -> float:
    """Kolmogorov-Smirnov test of the residuals against Uniform(0,1)."""
    return float(stats.kstest(res.residuals, "uniform").pvalue)


def test_dispersion(model: ContextGAM, y, n_sim: int = 250, seed: int = 0,
                    sim: ResidualSimulation | None = None) -> float:
    """Two-sided Monte-Carlo p for the observed Pearson chi-square."""
    sim = sim or run_simulation(model, y, n_sim=n_sim, seed=seed)
    return _mc_two_sided(sim.pearson_obs, sim.pearson_sim)


def test_zero_inflation(model: ContextGAM, y, n_sim: int = 250, seed: int = 0,
                        sim: ResidualSimulation | None = None) -> float:
    """Two-sided Monte-Carlo p for the observed zero count."""
    sim = sim or run_simulation(model, y, n_sim=n_sim, seed=seed)
    return _mc_two_sided(float(sim.zeros_obs), sim.zeros_sim.astype(float))


def test_outliers(res: SimulatedResiduals, n_sim: int | None = None) -> float:
    """Binomial test of residual mass in the extreme rank bins."""
    n_sim = n_sim or res.n_sim
    lo = 1.0 / (n_sim + 1.0)
    hi = n_sim / (n_sim + 1.0)
    k = int(np.sum((res.residuals < lo) | (res.residuals > hi)))
    return float(stats.binomtest(k, len(res.residuals),
                                 2.0 / (n_sim + 1.0)).pvalue)


def diagnostics_report(model: ContextGAM, y, n_sim: int = 250, seed: int = 0,
                       label: str = "") -> DiagnosticsReport:
    sim = run_simulation(model, y, n_sim=n_sim, seed=seed)
    res = SimulatedResiduals(sim.residuals, n_sim, seed)
    return DiagnosticsReport(
        ks_p=test_uniformity(res),
        dispersion_p=_mc_two_sided(sim.pearson_obs, sim.pearson_sim),
        zero_inflation_p=_mc_two_sided(float(sim.zeros_obs),
                                       sim.zeros_sim.astype(float)),
        outlier_p=test_outliers(res),
        aic=model.aic_, bic=model.bic_, n_sim=n_sim, seed=seed,
        family=model.family_.kind, label=label)


def holm_adjust_reports(reports: list[DiagnosticsReport]):
    """Holm-adjust each test's p-values across a batch of reports."""
    from .inference import holm_adjust
    for name in ("ks_p", "dispersion_p", "zero_inflation_p", "outlier_p"):
        adjusted = holm_adjust([getattr(r, name) for r in reports])
        for r, p in zip(reports, adjusted):
            setattr(r, f"{name}_holm", float(p))
    return reports


# ---------------------------------------------------------------------------
# Leave-one-season-out cross-validation
# ---------------------------------------------------------------------------

@dataclass
class LosocvResult:
    folds: pd.DataFrame
    failed: list[str]
    predictions: pd.DataFrame  # season, game_id, team, observed, predicted

    def aggregate(self) -> dict:
        ok = self.folds
        out = {}
        for col in ("mae_minute", "rmse_minute", "mae_game", "rmse_game",
                    "r2_minute", "r2_game"):
            out[col] = float(ok[col].mean())
            out[col + "_cv"] = (
                float(ok[col].std(ddof=1) / abs(ok[col].mean()))
                if len(ok) > 1 and ok[col].mean() != 0 else 0.0)
        return out


def _fit_fold(estimator_params, train, y_train):
    model = ContextGAM(**estimator_params)
    return model.fit(train, y_train)


def losocv(frame: pd.DataFrame, terms, family: str, stat: str,
           estimator_kwargs: dict | None = None, n_jobs: int = 1,
           rate_fn=None) -> LosocvResult:
    """Leave-one-season-out evaluation of per-minute and per-game errors.

    `rate_fn(model, test_frame)` can override how predictions are formed
    (used to demonstrate miscalibrated prediction rules); the default is
    `model.predict`. Folds that fail to fit are excluded and reported.
    """
    seasons = sorted(frame["season"].unique())
    if len(seasons) < 2:
        raise ValueError("LOSOCV needs at least 2 seasons")
    params = {"terms": terms, "family": family}
    params.update(estimator_kwargs or {})
    rate_fn = rate_fn or (lambda model, test: model.predict(test))

    def run_fold(season):
        train = frame[frame["season"] != season]
        test = frame[frame["season"] == season]
        try:
            model = _fit_fold(params, train, train[stat].to_numpy())
        except FitError as exc:
            return season, None, str(exc)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # unseen season level expected
            pred = rate_fn(model, test)
        obs = test[stat].to_numpy(dtype=float)
        train_mean = float(train[stat].mean())
        per_game = pd.DataFrame({
            "game_id": test["game_id"].to_numpy(),
            "team": test["team"].to_numpy(),
            "observed": obs, "predicted": pred,
        }).groupby(["game_id", "team"], as_index=False, sort=True).sum()
        train_game_mean = float(
            train.groupby(["game_id", "team"], sort=False)[stat].sum().mean())
        fold = {
            "season": season,
            "n_minute": len(test),
            "n_game": len(per_game),
            "mae_minute": float(np.mean(np.abs(obs - pred))),
            "rmse_minute": float(np.sqrt(np.mean((obs - pred) ** 2))),
            "mae_game": float(np.mean(
                np.abs(per_game["observed"] - per_game["predicted"]))),
            "rmse_game": float(np.sqrt(np.mean(
                (per_game["observed"] - per_game["predicted"]) ** 2))),
            "r2_minute": 1.0 - float(np.sum((obs - pred) ** 2)
                                     / np.sum((obs - train_mean) ** 2)),
            "r2_game": 1.0 - float(
                np.sum((per_game["observed"] - per_game["predicted"]) ** 2)
                / np.sum((per_game["observed"] - train_game_mean) ** 2)),
        }
        preds = pd.DataFrame({
            "season": season,
            "game_id": test["game_id"].to_numpy(),
            "team": test["team"].to_numpy(),
            "observed": obs, "predicted": pred,
        })
        return season, (fold, preds), None

    results = Parallel(n_jobs=n_jobs)(
        delayed(run_fold)(season) for season in seasons)
    folds, failed, predictions = [], [], []
    for season, payload, error in results:
        if payload is None:
            failed.append(f"{season}: {error}")
            continue
        folds.append(payload[0])
        predictions.append(payload[1])
    if not folds:
        raise FitError("every LOSOCV fold failed: " + "; ".join(failed))
    return LosocvResult(pd.DataFrame(folds), failed,
                        pd.concat(predictions, ignore_index=True))


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

@dataclass
class CalibrationCurve:
    buckets: pd.DataFrame = field(default_factory=pd.DataFrame)

    def to_csv(self, path):
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bucket_lo", "bucket_hi", "midpoint", "n",
                             "pred_mean", "obs_mean"])
            for row in self.buckets.itertuples(index=False):
                writer.writerow([
                    f"{row.bucket_lo:.2f}", f"{row.bucket_hi:.2f}",
                    f"{row.midpoint:.3f}", row.n,
                    f"{row.pred_mean:.10g}", f"{row.obs_mean:.10g}"])


def calibration_curve(predicted, observed) -> CalibrationCurve:
    """Bucket predicted rates into width-0.01 intervals ((lo, hi], first
    bucket [0, 0.01]) and compare with mean observed counts per bucket."""
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    if np.any(predicted < 0):
        raise ValueError("predicted rates must be nonnegative")
    idx = np.maximum(
        np.ceil(predicted / BUCKET_WIDTH - 1e-9).astype(int) - 1, 0)
    order = np.argsort(idx, kind="stable")
    rows = []
    for bucket in np.unique(idx):
        mask = idx == bucket
        lo = bucket * BUCKET_WIDTH
        rows.append({
            "bucket_lo": lo, "bucket_hi": lo + BUCKET_WIDTH,
            "midpoint": lo + BUCKET_WIDTH / 2.0,
            "n": int(mask.sum()),
            "pred_mean": float(predicted[mask].mean()),
            "obs_mean": float(observed[mask].mean()),
            "low_support": bool(mask.sum() < LOW_SUPPORT_N),
        })
    del order
    return CalibrationCurve(pd.DataFrame(rows))


def calibration_slope(curve: CalibrationCurve, min_n: int = 1000) -> float:
    """Weighted through-origin slope of observed means on bucket midpoints."""
    b = curve.buckets[curve.buckets["n"] >= min_n]
    if b.empty:
        raise ValueError(f"no buckets with n >= {min_n}")
    w = b["n"].to_numpy(dtype=float)
    x = b["midpoint"].to_numpy(dtype=float)
    y = b["obs_mean"].to_numpy(dtype=float)
    return float(np.sum(w * x * y) / np.sum(w * x * x))
