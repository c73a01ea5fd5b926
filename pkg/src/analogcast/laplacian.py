"""Diffusion-maps normalization, graph Laplacian, eigenbasis, and mode
diagnostics.

The eigenproblem L phi = lambda phi (L = I - P, P the Markov matrix of the
alpha-normalized kernel) is solved on the symmetric conjugate
S = D^{-1/2} K~ D^{-1/2}, which shares eigenvalues 1 - lambda with P and
whose orthonormal eigenvectors map back to D-orthonormal eigenfunctions via
phi = u / sqrt(D). This guarantees a real spectrum and stable orthogonality.

Eigenbasis file layout (magic ``EIGB``, little endian)::

    b"EIGB" | version u16 | source hash 8 bytes | alpha f64 | n u64 | l u64
    | D f64*n | Q f64*n | lambda f64*l | Phi f64*(n*l, row major)
"""

from dataclasses import dataclass
import struct

import numpy as np
import scipy.linalg
import scipy.signal

from .kernels import KernelMatrix

_EIGB_MAGIC = b"EIGB"
_EIGB_VERSION = 1


@dataclass(frozen=True)
class EigenBasis:
    """Laplacian eigenpairs with the degree weights defining their inner
    product: sum_k D_k phi_ki phi_kj = delta_ij.

    Eigenvalues are ascending with the trivial constant mode first
    (lambda_1 = 0). ``kernel_sums`` holds the pre-normalization row sums Q.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    degree: np.ndarray
    kernel_sums: np.ndarray
    alpha: float
    source_hash: str = ""

    @property
    def n(self) -> int:
        return self.eigenfunctions.shape[0]

    @property
    def l(self) -> int:
        return self.eigenfunctions.shape[1]

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        """The D-weighted inner product the basis is orthonormal under."""
        return float(np.sum(self.degree * f * g))


def normalize(K, alpha: float):
    """Density normalization K~_ij = K_ij / (Q_i^a Q_j^a), Q_i = sum_j K_ij.

    Returns (K~, Q). alpha = 0 leaves the kernel untouched.
    """
    values = K.values if isinstance(K, KernelMatrix) else np.asarray(K, dtype=float)
    Q = values.sum(axis=1)
    if alpha == 0:
        return values.copy(), Q
    scale = Q**alpha
    return values / np.outer(scale, scale), Q


def markov_and_laplacian(K_tilde: np.ndarray):
    """Degree vector, row-stochastic Markov matrix, and L = I - P."""
    D = K_tilde.sum(axis=1)
    if np.any(D <= 0):
        raise ValueError("nonpositive degree; kernel rows must have positive sums")
    P = K_tilde / D[:, None]
    L = np.eye(len(D)) - P
    return P, L, D


def eigs(L: np.ndarray, D: np.ndarray, l: int, *, probability_weights: bool = False) -> EigenBasis:
    """Smallest-eigenvalue pairs of L, D-orthonormalized.

    Solved on the symmetric conjugate S = D^{1/2} (I - L) D^{-1/2}. The sign
    of each eigenfunction is fixed by making its largest-magnitude entry
    (first such, on ties) positive, so outputs are reproducible across
    solvers. With ``probability_weights`` the inner product uses D / sum(D)
    instead of the literal unnormalized D.
    """
    n = len(D)
    if not 1 <= l <= n:
        raise ValueError(f"need 1 <= l <= n, got l={l}, n={n}")
    sq = np.sqrt(D)
    S = (np.eye(n) - L) * np.outer(sq, 1.0 / sq)
    S = 0.5 * (S + S.T)
    try:
        mu, U = scipy.linalg.eigh(S, subset_by_index=[n - l, n - 1])
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover - solver failure path
        raise RuntimeError(f"eigensolver failed to converge: {exc}") from exc
    # eigh returns ascending mu; lambda = 1 - mu must ascend too
    mu = mu[::-1]
    U = U[:, ::-1]
    lam = 1.0 - mu
    phi = U / sq[:, None]
    if probability_weights:
        phi = phi * np.sqrt(D.sum())
    for i in range(phi.shape[1]):
        col = phi[:, i]
        lead = np.argmax(np.abs(col))
        if col[lead] < 0:
            phi[:, i] = -col
    resid = np.max(np.abs(L @ phi - phi * lam[None, :]))
    if resid > 1e-6:
        raise RuntimeError(f"eigensolver residual {resid:.3e} exceeds 1e-6")
    return EigenBasis(lam, phi, D.copy(), np.empty(0), 0.0)


def decompose(K: KernelMatrix, alpha: float, l: int) -> EigenBasis:
    """Full chain: density normalization, Laplacian, eigenbasis."""
    K_tilde, Q = normalize(K, alpha)
    _, L, D = markov_and_laplacian(K_tilde)
    basis = eigs(L, D, l)
    return EigenBasis(
        basis.eigenvalues,
        basis.eigenfunctions,
        basis.degree,
        Q,
        float(alpha),
        source_hash=K.hash,
    )


# ---------------------------------------------------------------------------
# mode diagnostics


@dataclass(frozen=True)
class ModeDiagnostics:
    classification: str
    frequencies: np.ndarray
    power: np.ndarray
    autocorrelation: np.ndarray
    dominant_period: float


def mode_diagnostics(
    phi: np.ndarray,
    dt: float,
    *,
    harmonic_period: float = 12.0,
    low_freq_period: float = 24.0,
    power_fraction: float = 0.6,
    min_positive_acf_months: float = 12.0,
    broad_peak_bins: int = 3,
    segment_length: int = 256,
) -> ModeDiagnostics:
    """Classify an eigenfunction time series as periodic, low-frequency,
    intermittent, or other.

    Rules (thresholds are tunable keyword arguments):

    * periodic: >= 60% of spectral power within one frequency bin of a
      harmonic of 1/12 months
    * low-frequency: >= 60% of power below 1/24 months and autocorrelation
      positive out to 12 months
    * intermittent: the dominant spectral peak has half-power bandwidth of
      at least 3 bins

    The spectrum is a Welch estimate (segments of ``segment_length``); a raw
    periodogram's bin-to-bin noise would make the bandwidth test useless.
    """
    x = np.asarray(phi, dtype=float)
    if len(x) < 48:
        raise ValueError("need at least 48 samples for mode diagnostics")
    freqs, power = scipy.signal.welch(
        x, fs=1.0 / dt, nperseg=min(len(x), segment_length), detrend="constant"
    )
    freqs, power = freqs[1:], power[1:]  # DC bin carries no information after demeaning
    total = power.sum()
    if np.var(x) <= 1e-24 * max(np.mean(x**2), 1e-300):
        total = 0.0  # constant series: numerical dust is not a spectrum
    bin_width = freqs[1] - freqs[0]

    acf = _autocorrelation(x)
    peak = int(np.argmax(power))
    dominant_period = float(1.0 / freqs[peak]) if total > 0 else float("inf")

    classification = "other"
    if total > 0:
        harmonics = np.arange(1, int(np.floor(freqs[-1] * harmonic_period)) + 1) / harmonic_period
        if len(harmonics):
            near = np.min(np.abs(freqs[:, None] - harmonics[None, :]), axis=1) <= bin_width * 1.0001
            periodic_frac = power[near].sum() / total
        else:
            periodic_frac = 0.0
        low_frac = power[freqs < 1.0 / low_freq_period].sum() / total
        lags = int(round(min_positive_acf_months / dt))
        acf_positive = len(acf) > lags and np.all(acf[1 : lags + 1] > 0)

        half = power[peak] / 2.0
        lo = peak
        while lo > 0 and power[lo - 1] >= half:
            lo -= 1
        hi = peak
        while hi < len(power) - 1 and power[hi + 1] >= half:
            hi += 1
        bandwidth = hi - lo + 1

        if periodic_frac >= power_fraction:
            classification = "periodic"
        elif low_frac >= power_fraction and acf_positive:
            classification = "low-frequency"
        elif bandwidth >= broad_peak_bins:
            classification = "intermittent"

    return ModeDiagnostics(classification, freqs, power, acf, dominant_period)


def _autocorrelation(x: np.ndarray) -> np.ndarray:
    x = x - x.mean()
    n = len(x)
    var = float(x @ x)
    if var == 0:
        return np.zeros(n // 2 + 1)
    full = np.correlate(x, x, mode="full")[n - 1 :]
    return full[: n // 2 + 1] / var


# ---------------------------------------------------------------------------
# persistence


def save_basis(basis: EigenBasis, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_EIGB_MAGIC)
        fh.write(struct.pack("<H", _EIGB_VERSION))
        fh.write(bytes.fromhex(basis.source_hash or "0" * 16))
        fh.write(struct.pack("<d", basis.alpha))
        fh.write(struct.pack("<QQ", basis.n, basis.l))
        fh.write(np.ascontiguousarray(basis.degree, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.kernel_sums, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.eigenvalues, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(basis.eigenfunctions, dtype="<f8").tobytes())


def load_basis(path) -> EigenBasis:
    with open(path, "rb") as fh:
        if fh.read(4) != _EIGB_MAGIC:
            raise ValueError("not an EIGB file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _EIGB_VERSION:
            raise ValueError(f"unsupported EIGB version {version}")
        source_hash = fh.read(8).hex()
        (alpha,) = struct.unpack("<d", fh.read(8))
        n, l = struct.unpack("<QQ", fh.read(16))
        degree = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
        sums = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
        lam = np.frombuffer(fh.read(8 * l), dtype="<f8").copy()
        phi = np.frombuffer(fh.read(8 * n * l), dtype="<f8").reshape(n, l).copy()
    return EigenBasis(lam, phi, degree, sums, alpha, source_hash=source_hash)
