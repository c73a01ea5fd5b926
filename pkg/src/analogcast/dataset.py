"""Time series containers, file formats, climatology/anomaly logic, and
synthetic data generators.

Month indices are absolute integers on a fixed calendar: index ``m`` falls in
calendar month ``(m mod 12) + 1``, so index 0 is a January. Files declare the
index of their first sample, which fixes the calendar phase.

Raw binary layout (magic ``ACST``, little endian)::

    b"ACST" | version u16 | N u64 | d u64 | dt_months f64 | epoch_month i64
    | areas_flag u8 | [d cell areas f64] | N*d values f64 (row major)

``epoch_month`` is the month index of the first sample.
"""

from dataclasses import dataclass, field
import struct

import numpy as np

_ACST_MAGIC = b"ACST"
_ACST_VERSION = 1


class LoadError(ValueError):
    """Raised when a data file fails validation on load."""


def _calendar_months(timestamps: np.ndarray) -> np.ndarray:
    return (np.mod(timestamps, 12) + 1).astype(np.int64)


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Dataset:
    """Uniformly sampled multivariate series on a fixed grid.

    Parameters
    ----------
    values : ndarray, shape (N, d)
        One sample per row, physical units of the variable.
    timestamps : ndarray, shape (N,)
        Integer month indices, strictly increasing with constant stride ``dt``.
    dt : int
        Sampling step in months.
    variable_name : str
    cell_areas : ndarray, shape (d,), optional
        Positive grid-cell areas; required for integrated observables.
    calendar_month : ndarray, shape (N,)
        Calendar month (1..12) of each sample; derived from timestamps when
        not supplied.
    """

    values: np.ndarray
    timestamps: np.ndarray
    dt: int
    variable_name: str
    cell_areas: np.ndarray | None = None
    calendar_month: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("values must be a 2-d (samples x gridpoints) array")
        timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if timestamps.shape != (values.shape[0],):
            raise ValueError("timestamps length must match number of samples")
        strides = np.diff(timestamps)
        if len(strides) and (np.any(strides <= 0) or np.any(strides != self.dt)):
            raise ValueError("non-uniform sampling: timestamps must advance by dt")
        if self.dt <= 0:
            raise ValueError("dt must be a positive number of months")
        areas = self.cell_areas
        if areas is not None:
            areas = np.asarray(areas, dtype=np.float64)
            if areas.shape != (values.shape[1],):
                raise ValueError("cell_areas length must match grid size")
            if np.any(areas <= 0):
                raise ValueError("cell_areas must all be positive")
            areas = _freeze(areas)
        cal = self.calendar_month
        if cal is None:
            cal = _calendar_months(timestamps)
        else:
            cal = np.asarray(cal, dtype=np.int64)
            if not np.array_equal(cal, _calendar_months(timestamps)):
                raise ValueError("calendar_month inconsistent with timestamps mod 12")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "timestamps", _freeze(timestamps))
        object.__setattr__(self, "cell_areas", areas)
        object.__setattr__(self, "calendar_month", _freeze(cal))
        object.__setattr__(self, "dt", int(self.dt))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_gridpoints(self) -> int:
        return self.values.shape[1]

    def slice(self, start: int, stop: int) -> "Dataset":
        """Sub-record by sample index (used for train/test splits)."""
        return Dataset(
            self.values[start:stop],
            self.timestamps[start:stop],
            self.dt,
            self.variable_name,
            self.cell_areas,
        )


@dataclass(frozen=True)
class ScalarObservable:
    """A scalar series on the same time axis conventions as :class:`Dataset`."""

    values: np.ndarray
    timestamps: np.ndarray
    dt: int = 1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if values.ndim != 1 or values.shape != timestamps.shape:
            raise ValueError("values and timestamps must be equal-length vectors")
        strides = np.diff(timestamps)
        if len(strides) and np.any(strides != self.dt):
            raise ValueError("non-uniform sampling in observable timestamps")
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "timestamps", _freeze(timestamps))
        object.__setattr__(self, "dt", int(self.dt))

    @property
    def calendar_month(self) -> np.ndarray:
        return _calendar_months(self.timestamps)

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class Climatology:
    """Per-calendar-month mean, optionally with a per-month linear trend.

    ``per_month_trend`` rows are (intercept, slope per year) for the month's
    least-squares line in time; both referenced to time measured in years
    (month index / 12).
    """

    monthly_mean: np.ndarray
    per_month_trend: np.ndarray | None = None

    def __post_init__(self):
        mean = np.asarray(self.monthly_mean, dtype=np.float64)
        if mean.shape != (12,):
            raise ValueError("monthly_mean must have exactly 12 entries")
        trend = self.per_month_trend
        if trend is not None:
            trend = np.asarray(trend, dtype=np.float64)
            if trend.shape != (12, 2):
                raise ValueError("per_month_trend must be 12 (intercept, slope) pairs")
            if not np.all(np.isfinite(trend)):
                raise ValueError("per_month_trend entries must be finite")
            trend = _freeze(trend)
        object.__setattr__(self, "monthly_mean", _freeze(mean))
        object.__setattr__(self, "per_month_trend", trend)


# ---------------------------------------------------------------------------
# file formats


def load_dataset(path, format: str = "raw-binary", variable_name: str | None = None) -> Dataset:
    """Load a dataset from ``csv`` or ``raw-binary`` format.

    The variable name defaults to the file stem. Malformed headers,
    non-uniform timestamps and NaN values raise :class:`LoadError` naming the
    offending row/column.
    """
    path = str(path)
    if variable_name is None:
        import os

        variable_name = os.path.splitext(os.path.basename(path))[0]
    if format == "csv":
        return _load_csv(path, variable_name)
    if format == "raw-binary":
        return _load_binary(path, variable_name)
    raise ValueError(f"unknown dataset format: {format!r}")


def save_dataset(data: Dataset, path, format: str = "raw-binary") -> None:
    """Write a dataset; the raw-binary format round-trips bit exactly."""
    path = str(path)
    if format == "csv":
        _save_csv(data, path)
    elif format == "raw-binary":
        _save_binary(data, path)
    else:
        raise ValueError(f"unknown dataset format: {format!r}")


def _load_csv(path: str, name: str) -> Dataset:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        cols = header.split(",")
        if not cols or cols[0] != "month" or len(cols) < 2:
            raise LoadError(f"malformed CSV header {header!r}: expected 'month,var_1,...'")
        d = len(cols) - 1
        months = []
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != d + 1:
                raise LoadError(f"row {lineno}: expected {d + 1} fields, got {len(parts)}")
            months.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
    values = np.asarray(rows, dtype=np.float64)
    timestamps = np.asarray(months, dtype=np.int64)
    _reject_nan(values)
    strides = np.unique(np.diff(timestamps))
    if len(strides) > 1 or (len(strides) == 1 and strides[0] <= 0):
        raise LoadError("non-uniform sampling in month column")
    dt = int(strides[0]) if len(strides) else 1
    return Dataset(values, timestamps, dt, name)


def _save_csv(data: Dataset, path: str) -> None:
    d = data.n_gridpoints
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("month," + ",".join(f"var_{j + 1}" for j in range(d)) + "\n")
        for t, row in zip(data.timestamps, data.values):
            fh.write(str(int(t)) + "," + ",".join(repr(float(v)) for v in row) + "\n")


def _load_binary(path: str, name: str) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _ACST_MAGIC:
            raise LoadError(f"bad magic {magic!r}: not an ACST file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _ACST_VERSION:
            raise LoadError(f"unsupported ACST version {version}")
        n, d = struct.unpack("<QQ", fh.read(16))
        (dt_months,) = struct.unpack("<d", fh.read(8))
        (epoch_month,) = struct.unpack("<q", fh.read(8))
        (areas_flag,) = struct.unpack("<B", fh.read(1))
        if dt_months <= 0 or dt_months != int(dt_months):
            raise LoadError(f"dt_months must be a positive integer, got {dt_months}")
        areas = None
        if areas_flag:
            areas = np.frombuffer(fh.read(8 * d), dtype="<f8").astype(np.float64)
        raw = fh.read(8 * n * d)
        if len(raw) != 8 * n * d:
            raise LoadError(f"truncated file: expected {n}x{d} values")
    values = np.frombuffer(raw, dtype="<f8").reshape(n, d).astype(np.float64)
    _reject_nan(values)
    dt = int(dt_months)
    timestamps = epoch_month + dt * np.arange(n, dtype=np.int64)
    return Dataset(values, timestamps, dt, name, cell_areas=areas)


def _save_binary(data: Dataset, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(_ACST_MAGIC)
        fh.write(struct.pack("<H", _ACST_VERSION))
        fh.write(struct.pack("<QQ", data.n_samples, data.n_gridpoints))
        fh.write(struct.pack("<d", float(data.dt)))
        fh.write(struct.pack("<q", int(data.timestamps[0]) if data.n_samples else 0))
        fh.write(struct.pack("<B", 1 if data.cell_areas is not None else 0))
        if data.cell_areas is not None:
            fh.write(np.ascontiguousarray(data.cell_areas, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(data.values, dtype="<f8").tobytes())


def _reject_nan(values: np.ndarray) -> None:
    bad = np.argwhere(~np.isfinite(values))
    if len(bad):
        i, j = bad[0]
        raise LoadError(f"non-finite value at row {i}, column {j}")


# ---------------------------------------------------------------------------
# climatology / anomalies / detrending


def monthly_climatology(obs: ScalarObservable) -> Climatology:
    """Mean of the observable per calendar month.

    Raises if any calendar month has no samples (the missing months are
    listed in the error).
    """
    months = obs.calendar_month
    means = np.full(12, np.nan)
    missing = []
    for m in range(1, 13):
        sel = months == m
        if not np.any(sel):
            missing.append(m)
        else:
            means[m - 1] = obs.values[sel].mean()
    if missing:
        raise ValueError(f"no samples for calendar months {missing}")
    return Climatology(means)


def integrated_extent(data: Dataset) -> ScalarObservable:
    """Area-weighted sum of the field at each sample time."""
    if data.cell_areas is None:
        raise ValueError("dataset has no cell_areas; integrated observables need them")
    return ScalarObservable(data.values @ data.cell_areas, data.timestamps, data.dt)


def integrated_anomaly(data: Dataset, clim: Climatology) -> ScalarObservable:
    """Area-integrated series minus the per-calendar-month climatology.

    The climatology is typically built from a training record and applied
    unchanged here, which may be a different record (deliberate bias setups
    included).
    """
    extent = integrated_extent(data)
    anomaly = extent.values - clim.monthly_mean[data.calendar_month - 1]
    return ScalarObservable(anomaly, data.timestamps, data.dt)


def monthly_trend(obs: ScalarObservable) -> Climatology:
    """Fit a per-calendar-month mean and linear trend (slope per year)."""
    months = obs.calendar_month
    years = obs.timestamps.astype(np.float64) / 12.0
    means = np.empty(12)
    trend = np.empty((12, 2))
    for m in range(1, 13):
        sel = months == m
        if np.count_nonzero(sel) < 2:
            raise ValueError(f"calendar month {m} has fewer than 2 samples; cannot fit trend")
        design = np.column_stack([np.ones(np.count_nonzero(sel)), years[sel]])
        coef, *_ = np.linalg.lstsq(design, obs.values[sel], rcond=None)
        trend[m - 1] = coef
        means[m - 1] = obs.values[sel].mean()
    return Climatology(means, per_month_trend=trend)


def detrend_monthly(obs: ScalarObservable, clim: Climatology | None = None) -> ScalarObservable:
    """Remove a per-calendar-month linear trend.

    With ``clim`` given (fitted on a training record via
    :func:`monthly_trend`), that trend is subtracted unchanged; otherwise the
    trend is fitted on ``obs`` itself.
    """
    if clim is None:
        clim = monthly_trend(obs)
    if clim.per_month_trend is None:
        raise ValueError("climatology carries no per-month trend")
    years = obs.timestamps.astype(np.float64) / 12.0
    pairs = clim.per_month_trend[obs.calendar_month - 1]
    fitted = pairs[:, 0] + pairs[:, 1] * years
    return ScalarObservable(obs.values - fitted, obs.timestamps, obs.dt)


def fill_where(data: Dataset, mask: np.ndarray, value: float) -> Dataset:
    """Replace masked entries with a constant (e.g. an ice-covered fill value).

    ``mask`` is boolean, either per gridpoint (d,) or per entry (N, d).
    """
    mask = np.asarray(mask, dtype=bool)
    values = np.array(data.values)
    if mask.shape == (data.n_gridpoints,):
        values[:, mask] = value
    elif mask.shape == values.shape:
        values[mask] = value
    else:
        raise ValueError("mask shape must be (d,) or (N, d)")
    return Dataset(values, data.timestamps, data.dt, data.variable_name, data.cell_areas)


# ---------------------------------------------------------------------------
# synthetic generators


def synth_regime_ar(
    states,
    transition_matrix,
    n_samples: int,
    seed: int,
    x0: float = 0.0,
) -> tuple[ScalarObservable, np.ndarray]:
    """Markov-switching AR(1) generator.

    Parameters
    ----------
    states : sequence of (mu, coef, sigma)
        Per-regime forcing, autoregressive coefficient (|coef| < 1) and noise
        amplitude.
    transition_matrix : (K, K) row-stochastic matrix
    n_samples : int
    seed : int
    x0 : float
        Initial value.

    Returns
    -------
    (observable, affiliation)
        The series and the hidden regime labels (values 1..K, one per
        sample; label at time t governs the step t -> t+1). The chain starts
        in regime 1. Deterministic for a fixed seed.
    """
    spec = np.asarray([tuple(s) for s in states], dtype=np.float64)
    if spec.ndim != 2 or spec.shape[1] != 3:
        raise ValueError("states must be (mu, coef, sigma) triples")
    mu, coef, sigma = spec[:, 0], spec[:, 1], spec[:, 2]
    if np.any(np.abs(coef) >= 1):
        raise ValueError("autoregressive coefficients must satisfy |coef| < 1")
    if np.any(sigma < 0):
        raise ValueError("noise amplitudes must be nonnegative")
    T = np.asarray(transition_matrix, dtype=np.float64)
    K = len(spec)
    if T.shape != (K, K) or np.any(T < 0) or not np.allclose(T.sum(axis=1), 1.0, atol=1e-12):
        raise ValueError("transition matrix must be row-stochastic with matching size")

    rng = np.random.default_rng(seed)
    labels = np.empty(n_samples, dtype=np.int64)
    labels[0] = 0
    cum = np.cumsum(T, axis=1)
    draws = rng.random(n_samples - 1)
    for t in range(n_samples - 1):
        labels[t + 1] = np.searchsorted(cum[labels[t]], draws[t], side="right")
    noise = rng.standard_normal(n_samples - 1)

    x = np.empty(n_samples)
    x[0] = x0
    for t in range(n_samples - 1):
        k = labels[t]
        x[t + 1] = mu[k] + coef[k] * x[t] + sigma[k] * noise[t]
    obs = ScalarObservable(x, np.arange(n_samples, dtype=np.int64), 1)
    return obs, labels + 1


def synth_modulated_field(
    d: int,
    n_samples: int,
    periods=(12, 60),
    seed: int = 0,
    noise: float = 0.05,
    intermittent: bool = True,
    phase_diffusion: float = 0.0,
) -> tuple[Dataset, dict]:
    """Small-grid synthetic field: sinusoidal factors on smooth spatial
    patterns, an optional slow-envelope-modulated annual component, and
    white noise.

    The generative formula is::

        z_j(t) = sum_k cos(4 pi j / d + psi_k) * sin(2 pi t / p_k + theta_k + w_k(t))
                 + cos(4 pi j / d + psi_I) * env(t) * sin(2 pi t / p_c + chi)
                 + noise * eps_{j,t}

    where ``env`` is the slowest factor rescaled to [0, 1] and ``p_c`` the
    fastest period <= 24 months. The envelope term is present only when
    ``intermittent`` is set and both a slow (> 24) and a fast (<= 24) period
    exist. ``w_k`` is a random-walk phase wobble (step ``phase_diffusion``
    radians per sqrt-month) applied to the slow (> 24 month) factors only;
    it makes their oscillation decorrelate over a few cycles the way
    observed low-frequency climate modes do, while fast cycles stay
    phase-locked. Spatial patterns have wavenumber 2, so for even ``d``
    gridpoints j and j + d/2 carry identical parameters. Deterministic for
    a fixed seed; the returned metadata records the formula, phases and
    factor series.
    """
    periods = tuple(float(p) for p in periods)
    if d < 4:
        raise ValueError("need d >= 4 gridpoints")
    if n_samples < 10 * max(periods):
        raise ValueError("need n_samples >= 10 x the longest period")
    rng = np.random.default_rng(seed)
    t = np.arange(n_samples, dtype=np.float64)
    j = np.arange(d, dtype=np.float64)

    theta = rng.uniform(0, 2 * np.pi, size=len(periods))
    psi = rng.uniform(0, 2 * np.pi, size=len(periods))
    factors = {}
    for k, p in enumerate(periods):
        wobble = 0.0
        if p > 24 and phase_diffusion > 0:
            wobble = np.cumsum(rng.standard_normal(n_samples)) * phase_diffusion
        factors[p] = np.sin(2 * np.pi * t / p + theta[k] + wobble)
    values = np.zeros((n_samples, d))
    for k, p in enumerate(periods):
        pattern = np.cos(4 * np.pi * j / d + psi[k])
        values += np.outer(factors[p], pattern)

    slow = [p for p in periods if p > 24]
    fast = [p for p in periods if p <= 24]
    envelope = None
    modulated = None
    if intermittent and slow and fast:
        chi, psi_i = rng.uniform(0, 2 * np.pi, size=2)
        envelope = 0.5 * (1.0 + factors[max(slow)])
        modulated = envelope * np.sin(2 * np.pi * t / min(fast) + chi)
        values += np.outer(modulated, np.cos(4 * np.pi * j / d + psi_i))

    if noise > 0:
        values += noise * rng.standard_normal(values.shape)

    data = Dataset(
        values,
        np.arange(n_samples, dtype=np.int64),
        1,
        "synthetic",
        cell_areas=np.ones(d),
    )
    metadata = {
        "formula": "sum_k pattern_k(j) sin(2 pi t/p_k + theta_k + w_k(t)) "
        "+ pattern_I(j) env(t) sin(2 pi t/p_c + chi) + noise*eps",
        "periods": periods,
        "phases": theta.tolist(),
        "noise": noise,
        "phase_diffusion": phase_diffusion,
        "seed": seed,
        "factors": factors,
        "low_frequency": factors[max(slow)] if slow else None,
        "envelope": envelope,
        "intermittent_factor": modulated,
    }
    return data, metadata
