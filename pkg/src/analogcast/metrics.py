"""Forecast skill: RMSE and pattern correlation against lead time, truth
definitions, and the predictability horizon.

Truth for data-driven observables (eigenfunctions) is their out-of-sample
extension evaluated at the shifted test points; objective observables
(e.g. integrated anomalies) are verified against the directly computed test
series. Initial conditions whose verification time exits the test record are
dropped per lead, and the per-lead sample count is reported.

Skill files are CSV: ``lead,rmse,pc,n_used,method,truth_mode`` with the
config hash in a leading comment. An undefined pattern correlation (zero
variance at some lead) is written as an empty field, never as 0.
"""

from dataclasses import dataclass

import numpy as np

from .embedding import EmbeddedSeries
from .forecast import ForecastRun
from .ose import GHModel, LPModel, gh_extend, lp_extend


@dataclass(frozen=True)
class SkillCurves:
    leads: np.ndarray
    rmse: np.ndarray
    pc: np.ndarray
    n_used: np.ndarray
    method: str
    truth_mode: str

    def __post_init__(self):
        if not (len(self.leads) == len(self.rmse) == len(self.pc) == len(self.n_used)):
            raise ValueError("skill curve arrays must share one length")


def _predictions(pred) -> np.ndarray:
    return pred.predictions if isinstance(pred, ForecastRun) else np.asarray(pred, dtype=float)


def rmse_curve(pred, truth: np.ndarray) -> np.ndarray:
    """Root-mean-square error per lead over the valid initial conditions."""
    y = _predictions(pred)
    x = np.asarray(truth, dtype=float)
    if y.shape != x.shape:
        raise ValueError(f"prediction shape {y.shape} does not match truth {x.shape}")
    out = np.empty(y.shape[1])
    for i in range(y.shape[1]):
        valid = ~np.isnan(x[:, i])
        out[i] = np.sqrt(np.mean((y[valid, i] - x[valid, i]) ** 2)) if valid.any() else np.nan
    return out


def pc_curve(pred, truth: np.ndarray) -> np.ndarray:
    """Pattern correlation per lead: the mean normalized product of the
    centered predictions and truth across initial conditions. NaN where
    either side has zero variance (undefined, not zero)."""
    y = _predictions(pred)
    x = np.asarray(truth, dtype=float)
    if y.shape != x.shape:
        raise ValueError(f"prediction shape {y.shape} does not match truth {x.shape}")
    out = np.empty(y.shape[1])
    for i in range(y.shape[1]):
        valid = ~np.isnan(x[:, i])
        if not valid.any():
            out[i] = np.nan
            continue
        yi = y[valid, i]
        xi = x[valid, i]
        sy = np.sqrt(np.mean((yi - yi.mean()) ** 2))
        sx = np.sqrt(np.mean((xi - xi.mean()) ** 2))
        if sy == 0 or sx == 0:
            out[i] = np.nan
        else:
            out[i] = np.mean((yi - yi.mean()) * (xi - xi.mean())) / (sy * sx)
    return out


def n_used_per_lead(truth: np.ndarray) -> np.ndarray:
    return (~np.isnan(np.asarray(truth, dtype=float))).sum(axis=0)


def skill_curves(run: ForecastRun, truth: np.ndarray, truth_mode: str) -> SkillCurves:
    return SkillCurves(
        leads=np.asarray(run.leads, dtype=np.int64),
        rmse=rmse_curve(run, truth),
        pc=pc_curve(run, truth),
        n_used=n_used_per_lead(truth),
        method=run.method,
        truth_mode=truth_mode,
    )


def horizon(pc: np.ndarray, threshold: float, leads=None):
    """First lead at which the pattern correlation drops below the threshold,
    or None when it never does within the tested range. Undefined (NaN)
    entries neither trigger nor block the detection."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    pc = np.asarray(pc, dtype=float)
    below = np.flatnonzero(~np.isnan(pc) & (pc < threshold))
    if len(below) == 0:
        return None
    idx = int(below[0])
    return idx if leads is None else int(np.asarray(leads)[idx])


def truth_ose(test: EmbeddedSeries, model, leads) -> np.ndarray:
    """Ground truth for data-driven observables: the out-of-sample extension
    at each shifted test point. Entries whose verification time exits the
    test record are NaN."""
    if isinstance(model, GHModel):
        extended = gh_extend(model, test)
    elif isinstance(model, LPModel):
        extended = lp_extend(model, test)
    else:
        raise TypeError("model must be a fitted GH or LP extension model")
    return truth_direct(extended, leads, test.dt)


def truth_direct(observable_on_test: np.ndarray, leads, dt: int = 1) -> np.ndarray:
    """Ground truth for objective observables: the test-series value at each
    shifted time, NaN beyond the record."""
    f = np.asarray(observable_on_test, dtype=float)
    leads = np.asarray(leads, dtype=np.int64)
    n = len(f)
    out = np.full((n, len(leads)), np.nan)
    for i, tau in enumerate(leads):
        if tau < 0 or tau % dt:
            raise ValueError(f"lead {tau} is not a nonnegative whole number of samples")
        s = tau // dt
        if s >= n:
            raise ValueError(f"lead {tau} exceeds the test record")
        out[: n - s, i] = f[s:]
    if not np.any(np.isfinite(out).any(axis=0)):
        raise ValueError("no valid initial conditions at any lead")
    return out


def save_skill_csv(curves: SkillCurves, path, config_hash: str = "") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if config_hash:
            fh.write(f"# config={config_hash}\n")
        fh.write("lead,rmse,pc,n_used,method,truth_mode\n")
        for lead, rmse, pc, n in zip(curves.leads, curves.rmse, curves.pc, curves.n_used):
            pc_str = "" if np.isnan(pc) else repr(float(pc))
            fh.write(
                f"{int(lead)},{float(rmse)!r},{pc_str},{int(n)},"
                f"{curves.method},{curves.truth_mode}\n"
            )


def load_skill_csv(path) -> SkillCurves:
    leads, rmse, pc, n_used = [], [], [], []
    method = truth_mode = ""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("lead,"):
                continue
            parts = line.split(",")
            leads.append(int(parts[0]))
            rmse.append(float(parts[1]))
            pc.append(float(parts[2]) if parts[2] else np.nan)
            n_used.append(int(parts[3]))
            method, truth_mode = parts[4], parts[5]
    return SkillCurves(
        np.asarray(leads, dtype=np.int64),
        np.asarray(rmse),
        np.asarray(pc),
        np.asarray(n_used, dtype=np.int64),
        method,
        truth_mode,
    )
