"""Delay embedding of one or more datasets onto a shared sample axis.

Each embedded sample is the concatenation of the current snapshot with the
q-1 preceding ones; samples are indexed by the timestamp of their lead
(most recent) snapshot. Phase velocities are the Euclidean distances between
consecutive embedded samples; the first embedded sample has no predecessor
and is dropped when velocities are attached, so every retained sample has a
well-defined velocity.
"""

from dataclasses import dataclass

import numpy as np

VELOCITY_FLOOR_FACTOR = 1e-12


@dataclass(frozen=True)
class EmbeddedComponent:
    """One variable's block of the embedded state: (n, d*q) row vectors."""

    name: str
    window: int
    vectors: np.ndarray
    phase_velocities: np.ndarray | None = None

    def __post_init__(self):
        vec = np.ascontiguousarray(self.vectors, dtype=np.float64)
        vec.setflags(write=False)
        object.__setattr__(self, "vectors", vec)
        if self.phase_velocities is not None:
            xi = np.ascontiguousarray(self.phase_velocities, dtype=np.float64)
            if xi.shape != (vec.shape[0],):
                raise ValueError("phase velocities must have one entry per sample")
            xi.setflags(write=False)
            object.__setattr__(self, "phase_velocities", xi)


@dataclass(frozen=True)
class EmbeddedSeries:
    """Lag-embedded data: one component per variable, shared timestamps."""

    components: tuple[EmbeddedComponent, ...]
    timestamps: np.ndarray
    dt: int

    def __post_init__(self):
        comps = tuple(self.components)
        ts = np.ascontiguousarray(self.timestamps, dtype=np.int64)
        n = len(ts)
        for c in comps:
            if c.vectors.shape[0] != n:
                raise ValueError(f"component {c.name!r} sample count differs from timestamps")
        ts.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "dt", int(self.dt))

    @property
    def n_samples(self) -> int:
        return len(self.timestamps)

    @property
    def has_velocities(self) -> bool:
        return all(c.phase_velocities is not None for c in self.components)

    def take(self, indices) -> "EmbeddedSeries":
        """Sub-series at the given sample indices (velocities preserved)."""
        indices = np.asarray(indices)
        comps = tuple(
            EmbeddedComponent(
                c.name,
                c.window,
                c.vectors[indices],
                None if c.phase_velocities is None else c.phase_velocities[indices],
            )
            for c in self.components
        )
        return EmbeddedSeries(comps, self.timestamps[indices], self.dt)


def embed(data, q: int) -> EmbeddedSeries:
    """Lag-embed a dataset with window length ``q`` (in samples).

    Row i of the embedded matrix concatenates snapshots i, i-1, ..., i-q+1,
    giving n = N - q + 1 samples. No phase velocities are attached yet.
    """
    N, d = data.values.shape
    if q < 1:
        raise ValueError("embedding window must be at least 1")
    if q > N:
        raise ValueError(f"embedding window q={q} exceeds record length N={N}")
    n = N - q + 1
    blocks = [data.values[q - 1 - k : N - k] for k in range(q)]
    vectors = np.concatenate(blocks, axis=1) if q > 1 else blocks[0].copy()
    assert vectors.shape == (n, d * q)
    comp = EmbeddedComponent(data.variable_name, q, vectors)
    return EmbeddedSeries((comp,), data.timestamps[q - 1 :], data.dt)


def with_phase_velocities(emb: EmbeddedSeries) -> EmbeddedSeries:
    """Attach per-component phase velocities, dropping the first sample.

    xi_i = ||x_i - x_{i-1}|| in each component's embedding space. Exact
    repeats would zero a kernel denominator, so velocities are floored at
    ``VELOCITY_FLOOR_FACTOR`` times their median (absolute floor when the
    median itself is zero).
    """
    if emb.n_samples < 2:
        raise ValueError("need at least 2 embedded samples to form velocities")
    comps = []
    for c in emb.components:
        xi = np.linalg.norm(np.diff(c.vectors, axis=0), axis=1)
        med = float(np.median(xi))
        floor = VELOCITY_FLOOR_FACTOR * med if med > 0 else VELOCITY_FLOOR_FACTOR
        xi = np.maximum(xi, floor)
        comps.append(EmbeddedComponent(c.name, c.window, c.vectors[1:], xi))
    return EmbeddedSeries(tuple(comps), emb.timestamps[1:], emb.dt)


def join(series: list[EmbeddedSeries]) -> EmbeddedSeries:
    """Align several embedded series on their shared lead-snapshot timestamps
    and concatenate their components.

    All inputs must share dt, and either all or none must carry phase
    velocities.
    """
    if not series:
        raise ValueError("nothing to join")
    if len(series) == 1:
        return series[0]
    dt = series[0].dt
    if any(s.dt != dt for s in series):
        raise ValueError("cannot join series with different sampling steps")
    flags = {s.has_velocities for s in series}
    if len(flags) > 1:
        raise ValueError("cannot join series with and without phase velocities")
    shared = series[0].timestamps
    for s in series[1:]:
        shared = np.intersect1d(shared, s.timestamps)
    if len(shared) == 0:
        raise ValueError("joined series have no overlapping timestamps")
    comps = []
    for s in series:
        idx = np.searchsorted(s.timestamps, shared)
        comps.extend(s.take(idx).components)
    return EmbeddedSeries(tuple(comps), shared, dt)


def stacked_vectors(emb: EmbeddedSeries) -> np.ndarray:
    """All components concatenated into one (n, sum d_c*q_c) matrix."""
    return np.concatenate([c.vectors for c in emb.components], axis=1)
