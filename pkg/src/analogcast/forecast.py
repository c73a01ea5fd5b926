"""Kernel ensemble analog forecasting.

A prediction at lead tau is a convex combination, over historical analogs of
the initial state, of observable values read tau months further along the
training record. Analogs whose shifted timestamp would exit the record are
excluded per lead and the remaining weights renormalized; the exclusion log
records exactly which trailing samples were dropped, and the shifted arrays
are sliced so an out-of-record read is structurally impossible.

Nearest-neighbor truncation (nN) selects the analog support from the raw
kernel weights before any eigenvalue scaling or per-lead renormalization.

Run files: a CSV with columns ``init_month,lead,prediction,truth,method``
and a binary mirror (magic ``RUNB``) holding the same arrays.
"""

from dataclasses import dataclass
import struct

import numpy as np

from .embedding import EmbeddedSeries
from .kernels import log_cross_matrix
from .ose import GHModel, LPModel, extension_log_weights, gh_extension_values, normalize_log_rows

_RUNB_MAGIC = b"RUNB"
_RUNB_VERSION = 1


@dataclass(frozen=True)
class ExclusionLog:
    """Per-lead record of training samples excluded at the record boundary.

    At lead tau, exactly the last tau/dt training samples have no shifted
    value and are removed from every analog ensemble.
    """

    leads: np.ndarray
    n_train: int
    shift_steps: np.ndarray
    excluded_counts: np.ndarray
    first_excluded_index: np.ndarray

    def total_excluded(self) -> int:
        return int(self.excluded_counts.sum())


@dataclass(frozen=True)
class ForecastRun:
    """Predictions over a lead grid for a set of initial conditions."""

    method: str
    leads: np.ndarray
    predictions: np.ndarray
    init_timestamps: np.ndarray
    params: dict
    excluded: ExclusionLog | None = None


def shift(f: np.ndarray, tau: int, dt: int = 1):
    """Shift an observable tau months forward along the record.

    Returns (shifted values on the first n - tau/dt samples, validity mask
    over the original samples).
    """
    f = np.asarray(f)
    if tau < 0:
        raise ValueError("lead time must be nonnegative")
    if tau % dt:
        raise ValueError(f"lead {tau} is not a whole number of samples at dt={dt}")
    s = tau // dt
    n = len(f)
    if s >= n:
        raise ValueError(f"lead {tau} exceeds the record ({n} samples at dt={dt})")
    mask = np.zeros(n, dtype=bool)
    mask[: n - s] = True
    return f[s:], mask


def truncate_ensemble(weights: np.ndarray, n_neighbors: int) -> np.ndarray:
    """Keep the n_neighbors largest weights (ties to the earlier sample) and
    renormalize to sum 1. Works on a single weight row or a stack of rows."""
    w = np.asarray(weights, dtype=float)
    single = w.ndim == 1
    rows = w[None, :] if single else w
    if not 1 <= n_neighbors <= rows.shape[1]:
        raise ValueError(f"need 1 <= nN <= {rows.shape[1]}, got {n_neighbors}")
    order = np.argsort(-rows, axis=1, kind="stable")[:, :n_neighbors]
    out = np.zeros_like(rows)
    np.put_along_axis(out, order, np.take_along_axis(rows, order, axis=1), axis=1)
    out = out / out.sum(axis=1, keepdims=True)
    return out[0] if single else out


def _truncate_log_support(log_rows: np.ndarray, n_neighbors: int | None) -> np.ndarray:
    """Restrict each row's support to its n_neighbors largest log weights
    (ties to the earlier sample); excluded analogs become -inf."""
    if n_neighbors is None or n_neighbors >= log_rows.shape[1]:
        if n_neighbors is not None and n_neighbors > log_rows.shape[1]:
            raise ValueError(f"nN={n_neighbors} exceeds the {log_rows.shape[1]} available analogs")
        return log_rows
    if n_neighbors < 1:
        raise ValueError("nN must be at least 1")
    order = np.argsort(-log_rows, axis=1, kind="stable")[:, :n_neighbors]
    out = np.full_like(log_rows, -np.inf)
    np.put_along_axis(out, order, np.take_along_axis(log_rows, order, axis=1), axis=1)
    return out


def persistence(y0_value, tau: int = 0):
    """The constant forecast y(tau) = y(0)."""
    return y0_value


def _lead_steps(leads, dt: int, n_train: int) -> np.ndarray:
    leads = np.asarray(leads, dtype=np.int64)
    if np.any(leads < 0):
        raise ValueError("leads must be nonnegative")
    if np.any(leads % dt):
        raise ValueError("every lead must be a whole number of samples")
    steps = leads // dt
    if np.any(steps >= n_train):
        raise ValueError("some leads exceed the training record")
    return steps


def _exclusion_log(leads, steps, n_train: int) -> ExclusionLog:
    steps = np.asarray(steps)
    return ExclusionLog(
        leads=np.asarray(leads, dtype=np.int64),
        n_train=n_train,
        shift_steps=steps,
        excluded_counts=steps.copy(),
        first_excluded_index=n_train - steps,
    )


def _ensemble_predict(log_support, values_by_lead, steps, audit=False):
    """Shared per-lead loop: renormalize the valid slice of each support row
    (in log space) and average the per-analog values. Optionally returns the
    convex bounds (min/max of the values over each row's support)."""
    n_pts, n_train = log_support.shape
    n_leads = len(steps)
    pred = np.empty((n_pts, n_leads))
    lo = np.empty((n_pts, n_leads)) if audit else None
    hi = np.empty((n_pts, n_leads)) if audit else None
    for i, s in enumerate(steps):
        valid = n_train - s
        W = normalize_log_rows(log_support[:, :valid])
        g = values_by_lead(s)
        pred[:, i] = W @ g
        if audit:
            mask = W > 0
            lo[:, i] = np.where(mask, g[None, :], np.inf).min(axis=1)
            hi[:, i] = np.where(mask, g[None, :], -np.inf).max(axis=1)
    return (pred, lo, hi) if audit else pred


def keaf_gh(
    model: GHModel,
    test: EmbeddedSeries,
    leads,
    n_neighbors: int | None = None,
    audit: bool = False,
):
    """Analog forecast through the truncated eigenbasis: the extension vector
    g_k = sum_j c_j phi_j(x_k) / lambda'_j is read at the analogs' shifted
    positions. At lead 0 this reproduces the Nystrom extension exactly."""
    n_train = model.training.n_samples
    steps = _lead_steps(leads, model.training.dt, n_train)
    logw = extension_log_weights(
        model.training, model.spec, test, model.basis.kernel_sums, model.basis.alpha
    )
    support = _truncate_log_support(logw, n_neighbors)
    g_full = gh_extension_values(model)
    result = _ensemble_predict(support, lambda s: g_full[s:], steps, audit=audit)
    log = _exclusion_log(leads, steps, n_train)
    return (*result, log) if audit else (result, log)


def keaf_lp(
    model: LPModel,
    test: EmbeddedSeries,
    leads,
    n_neighbors: int | None = None,
    audit: bool = False,
):
    """Analog forecast through the pyramid: each level's smoother reads its
    own target vector at the shifted analog positions. At lead 0 this
    reproduces the pyramid extension (training error included)."""
    n_train = model.training.n_samples
    steps = _lead_steps(leads, model.training.dt, n_train)
    n_pts = test.n_samples
    pred = np.zeros((n_pts, len(steps)))
    lo = np.zeros((n_pts, len(steps))) if audit else None
    hi = np.zeros((n_pts, len(steps))) if audit else None
    for spec, target in zip(model.level_specs, model.level_targets):
        logw = log_cross_matrix(test, model.training, spec)
        support = _truncate_log_support(logw, n_neighbors)
        result = _ensemble_predict(support, lambda s, t=target: t[s:], steps, audit=audit)
        if audit:
            part, part_lo, part_hi = result
            pred += part
            lo += part_lo
            hi += part_hi
        else:
            pred += result
    log = _exclusion_log(leads, steps, n_train)
    return (pred, lo, hi, log) if audit else (pred, log)


def run_forecasts(
    method: str,
    models: dict,
    test: EmbeddedSeries,
    leads,
    n_neighbors: int | None = None,
    lead0_truth: np.ndarray | None = None,
) -> ForecastRun:
    """Produce the full prediction matrix for one method.

    ``models`` holds the fitted extension models under keys ``gh`` / ``lp``;
    persistence instead repeats ``lead0_truth`` (the observable at each
    initial condition) across all leads.
    """
    leads = np.asarray(leads, dtype=np.int64)
    params = {"nN": n_neighbors}
    if method == "keaf-gh":
        pred, log = keaf_gh(models["gh"], test, leads, n_neighbors)
        params["l_trunc"] = models["gh"].truncation
    elif method == "keaf-lp":
        pred, log = keaf_lp(models["lp"], test, leads, n_neighbors)
        params["eps_tol"] = models["lp"].eps_tol
        params["levels"] = models["lp"].n_levels
    elif method == "persistence":
        if lead0_truth is None:
            raise ValueError("persistence needs the observable at lead 0")
        pred = np.tile(np.asarray(lead0_truth, dtype=float)[:, None], (1, len(leads)))
        log = None
    else:
        raise ValueError(f"unknown forecast method {method!r}")
    if not np.all(np.isfinite(pred)):
        raise FloatingPointError(f"non-finite prediction produced by {method}")
    return ForecastRun(method, leads, pred, test.timestamps.copy(), params, log)


# ---------------------------------------------------------------------------
# run files


def save_run_csv(run: ForecastRun, truth: np.ndarray, path, config_hash: str = "") -> None:
    """One row per (initial condition, lead); truth may contain NaN where the
    verifying record ends."""
    truth = np.asarray(truth, dtype=float)
    if truth.shape != run.predictions.shape:
        raise ValueError("truth matrix shape must match predictions")
    with open(path, "w", encoding="utf-8") as fh:
        if config_hash:
            fh.write(f"# config={config_hash}\n")
        fh.write("init_month,lead,prediction,truth,method\n")
        for j, t0 in enumerate(run.init_timestamps):
            for i, lead in enumerate(run.leads):
                tv = truth[j, i]
                tv_str = "" if np.isnan(tv) else repr(float(tv))
                fh.write(
                    f"{int(t0)},{int(lead)},{float(run.predictions[j, i])!r},"
                    f"{tv_str},{run.method}\n"
                )


def save_run_binary(run: ForecastRun, truth: np.ndarray, path, config_hash: str = "") -> None:
    method_bytes = run.method.encode()
    hash_bytes = (config_hash or "0" * 32).encode()
    with open(path, "wb") as fh:
        fh.write(_RUNB_MAGIC)
        fh.write(struct.pack("<H", _RUNB_VERSION))
        fh.write(struct.pack("<H", len(hash_bytes)))
        fh.write(hash_bytes)
        fh.write(struct.pack("<H", len(method_bytes)))
        fh.write(method_bytes)
        n_init, n_leads = run.predictions.shape
        fh.write(struct.pack("<QQ", n_init, n_leads))
        fh.write(np.ascontiguousarray(run.leads, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(run.init_timestamps, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(run.predictions, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(truth, dtype="<f8").tobytes())


def load_run_binary(path):
    """Returns (ForecastRun, truth matrix, config hash)."""
    with open(path, "rb") as fh:
        if fh.read(4) != _RUNB_MAGIC:
            raise ValueError("not a RUNB file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _RUNB_VERSION:
            raise ValueError(f"unsupported RUNB version {version}")
        (hash_len,) = struct.unpack("<H", fh.read(2))
        config_hash = fh.read(hash_len).decode()
        (method_len,) = struct.unpack("<H", fh.read(2))
        method = fh.read(method_len).decode()
        n_init, n_leads = struct.unpack("<QQ", fh.read(16))
        leads = np.frombuffer(fh.read(8 * n_leads), dtype="<i8").copy()
        init_ts = np.frombuffer(fh.read(8 * n_init), dtype="<i8").copy()
        pred = np.frombuffer(fh.read(8 * n_init * n_leads), dtype="<f8").reshape(n_init, n_leads).copy()
        truth = np.frombuffer(fh.read(8 * n_init * n_leads), dtype="<f8").reshape(n_init, n_leads).copy()
    run = ForecastRun(method, leads, pred, init_ts, {})
    return run, truth, config_hash
