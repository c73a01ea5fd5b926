"""Pairwise similarity kernels and their row-normalized (probability) form.

Three kinds are supported:

* ``gaussian``: exp(-||xi - xj||^2 / sigma0)
* ``nlsa``: exp(-||xi - xj||^2 / (epsilon * xi_i * xi_j)), with phase
  velocities scaling the bandwidth per sample pair
* ``nlsa-multivariate``: product of per-component nlsa factors sharing one
  epsilon, which makes the kernel invariant to per-component unit changes

Kernel matrices are dense; the scale here (n up to ~1e4) does not warrant
sparsification.

Cache file layout (magic ``KMAT``, little endian)::

    b"KMAT" | version u16 | content hash 8 bytes | n u64 | n*n values f64
"""

from dataclasses import dataclass
import math
import struct

import numpy as np

from ._hashing import content_hash
from .embedding import EmbeddedSeries, stacked_vectors

_KMAT_MAGIC = b"KMAT"
_KMAT_VERSION = 1

_KINDS = ("gaussian", "nlsa", "nlsa-multivariate")
_ALPHAS = (0.0, 0.5, 1.0)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel kind plus its scale and normalization parameters."""

    kind: str
    epsilon: float | None = None
    sigma0: float | None = None
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian":
            if self.sigma0 is None or self.sigma0 <= 0:
                raise ValueError("gaussian kernel needs sigma0 > 0")
        else:
            if self.epsilon is None or self.epsilon <= 0:
                raise ValueError("nlsa kernels need epsilon > 0")
        if float(self.alpha) not in _ALPHAS:
            raise ValueError("alpha must be one of 0, 1/2, 1")

    def rescaled(self, factor: float) -> "KernelSpec":
        """Same kernel with the bandwidth parameter multiplied by ``factor``."""
        if self.kind == "gaussian":
            return KernelSpec(self.kind, sigma0=self.sigma0 * factor, alpha=self.alpha)
        return KernelSpec(self.kind, epsilon=self.epsilon * factor, alpha=self.alpha)


@dataclass(frozen=True)
class KernelMatrix:
    """Dense symmetric kernel matrix over one embedded series."""

    values: np.ndarray
    row_sums: np.ndarray
    spec: KernelSpec
    timestamps: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def hash(self) -> str:
        return content_hash(self.values, repr(self.spec))


# ---------------------------------------------------------------------------
# scalar forms (reference-style evaluation on single pairs)


def gaussian(xi, xj, sigma0: float) -> float:
    """Gaussian similarity of two state vectors; 1 iff they coincide."""
    if sigma0 <= 0:
        raise ValueError("sigma0 must be positive")
    diff = np.asarray(xi, dtype=float) - np.asarray(xj, dtype=float)
    return math.exp(-float(diff @ diff) / sigma0)


def nlsa(xi, xj, vel_i: float, vel_j: float, epsilon: float) -> float:
    """Phase-velocity-scaled similarity; equals gaussian with
    sigma0 = epsilon * vel_i * vel_j."""
    if vel_i <= 0 or vel_j <= 0:
        raise ValueError("phase velocities must be positive (apply the floor first)")
    return gaussian(xi, xj, epsilon * vel_i * vel_j)


def nlsa_multivariate(xi_parts, xj_parts, vels_i, vels_j, epsilon: float) -> float:
    """Product of per-component nlsa factors with a shared epsilon."""
    if not (len(xi_parts) == len(xj_parts) == len(vels_i) == len(vels_j)):
        raise ValueError("component count mismatch between the two samples")
    out = 1.0
    for a, b, vi, vj in zip(xi_parts, xj_parts, vels_i, vels_j):
        out *= nlsa(a, b, vi, vj, epsilon)
    return out


# ---------------------------------------------------------------------------
# matrix forms


def _sq_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    d2 = aa[:, None] + bb[None, :] - 2.0 * (A @ B.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _log_kernel(test: EmbeddedSeries, train: EmbeddedSeries, spec: KernelSpec) -> np.ndarray:
    if [c.name for c in test.components] != [c.name for c in train.components] or [
        c.window for c in test.components
    ] != [c.window for c in train.components]:
        raise ValueError("test/train component structure mismatch")
    if spec.kind == "gaussian":
        return -_sq_distances(stacked_vectors(test), stacked_vectors(train)) / spec.sigma0
    if spec.kind == "nlsa" and len(train.components) > 1:
        raise ValueError("nlsa kernel is single-component; use nlsa-multivariate")
    if not (test.has_velocities and train.has_velocities):
        raise ValueError("nlsa kernels need phase velocities on both series")
    log_k = None
    for ct, cx in zip(test.components, train.components):
        d2 = _sq_distances(ct.vectors, cx.vectors)
        scale = spec.epsilon * np.outer(ct.phase_velocities, cx.phase_velocities)
        term = -d2 / scale
        log_k = term if log_k is None else log_k + term
    return log_k


def log_cross_matrix(test: EmbeddedSeries, train: EmbeddedSeries, spec: KernelSpec) -> np.ndarray:
    """Log kernel values between test rows and train columns.

    Kernel entries are mathematically strictly positive but can underflow
    when exponentiated at fine scales; weight normalizations should work on
    these log values (they are invariant to a per-row shift).
    """
    return _log_kernel(test, train, spec)


def cross_matrix(test: EmbeddedSeries, train: EmbeddedSeries, spec: KernelSpec) -> np.ndarray:
    """Kernel values between test rows and train columns, shape (n', n).

    When the two series carry identical samples the result is made exactly
    symmetric (the mathematical truth that floating-point evaluation order
    would otherwise break).
    """
    K = np.exp(_log_kernel(test, train, spec))
    if test is train or _same_samples(test, train):
        iu = np.triu_indices(K.shape[0], k=1)
        K[(iu[1], iu[0])] = K[iu]
    if not np.all(np.isfinite(K)):
        i, j = np.argwhere(~np.isfinite(K))[0]
        raise FloatingPointError(f"non-finite kernel entry at pair ({i}, {j})")
    return K


def _same_samples(a: EmbeddedSeries, b: EmbeddedSeries) -> bool:
    if a.n_samples != b.n_samples or len(a.components) != len(b.components):
        return False
    return all(np.array_equal(ca.vectors, cb.vectors) for ca, cb in zip(a.components, b.components))


def build_matrix(emb: EmbeddedSeries, spec: KernelSpec) -> KernelMatrix:
    """Pairwise kernel matrix over one embedded series (symmetric, unit
    diagonal, strictly positive entries)."""
    if emb.n_samples < 2:
        raise ValueError("need at least 2 samples for a kernel matrix")
    K = cross_matrix(emb, emb, spec)
    return KernelMatrix(K, K.sum(axis=1), spec, emb.timestamps)


def row_normalize(K) -> np.ndarray:
    """Scale each row to sum to 1, turning rows into probability weights."""
    values = K.values if isinstance(K, KernelMatrix) else np.asarray(K, dtype=float)
    sums = values.sum(axis=1)
    zero = np.flatnonzero(sums <= 0)
    if len(zero):
        raise ValueError(f"row {zero[0]} of the kernel sums to zero; cannot normalize")
    return values / sums[:, None]


def multiscale_family(spec: KernelSpec, levels: int) -> list[KernelSpec]:
    """Dyadic family: level l has the base bandwidth divided by 2**l.

    Applies to sigma0 for gaussian kernels and to epsilon for nlsa kernels,
    which plays the same bandwidth role there.
    """
    if levels < 0:
        raise ValueError("levels must be >= 0")
    return [spec.rescaled(0.5**l) for l in range(levels + 1)]


def median_pairwise_sq_distance(emb: EmbeddedSeries) -> float:
    """Median of pairwise squared distances (off-diagonal) in stacked space."""
    X = stacked_vectors(emb)
    d2 = _sq_distances(X, X)
    iu = np.triu_indices(len(X), k=1)
    return float(np.median(d2[iu]))


def median_pairwise_distance(emb: EmbeddedSeries) -> float:
    """Median of pairwise (unsquared) distances; the literal reading of the
    usual bandwidth heuristic, kept as an alternative policy."""
    X = stacked_vectors(emb)
    d2 = _sq_distances(X, X)
    iu = np.triu_indices(len(X), k=1)
    return float(np.median(np.sqrt(d2[iu])))


# ---------------------------------------------------------------------------
# cache file


def save_kernel_matrix(km: KernelMatrix, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_KMAT_MAGIC)
        fh.write(struct.pack("<H", _KMAT_VERSION))
        fh.write(bytes.fromhex(km.hash))
        fh.write(struct.pack("<Q", km.n))
        fh.write(np.ascontiguousarray(km.values, dtype="<f8").tobytes())


def load_kernel_matrix(path, spec: KernelSpec, timestamps: np.ndarray) -> KernelMatrix:
    with open(path, "rb") as fh:
        if fh.read(4) != _KMAT_MAGIC:
            raise ValueError("not a KMAT file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _KMAT_VERSION:
            raise ValueError(f"unsupported KMAT version {version}")
        stored_hash = fh.read(8).hex()
        (n,) = struct.unpack("<Q", fh.read(8))
        values = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n).copy()
    km = KernelMatrix(values, values.sum(axis=1), spec, timestamps)
    if km.hash != stored_hash:
        raise ValueError("kernel cache hash mismatch; stale or foreign file")
    return km
