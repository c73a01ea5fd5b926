"""Out-of-sample extension of observables known on the training samples.

Two schemes:

* Geometric harmonics (Nystrom): project f onto the Laplacian eigenbasis and
  extend each eigenfunction by kernel averaging. The eigenvalue entering the
  extension is that of the row-normalized kernel operator, lambda' = 1 -
  lambda, since both operators share eigenfunctions; levels with lambda'
  below a conditioning floor are refused.
* Laplacian pyramid: multiscale kernel smoothers of dyadically shrinking
  bandwidth applied to successive residuals until a prescribed training
  error is met. Exact at no level of truncation, but applicable to
  observables without a tight eigenbasis expansion.

Model files: magic ``GHMD`` / ``LPMD``, versioned, little endian; both embed
the hashes of their source basis/training data so stale artifacts are
rejected on load.
"""

from dataclasses import dataclass
import struct

import numpy as np

from ._hashing import content_hash
from .embedding import EmbeddedSeries
from .kernels import (
    KernelSpec,
    build_matrix,
    log_cross_matrix,
    multiscale_family,
    row_normalize,
)
from .laplacian import EigenBasis

CONDITIONING_FLOOR = 1e-6
_GHMD_MAGIC = b"GHMD"
_LPMD_MAGIC = b"LPMD"
_MODEL_VERSION = 1


def series_hash(emb: EmbeddedSeries) -> str:
    parts = [emb.timestamps]
    for c in emb.components:
        parts.extend([c.name, c.window, c.vectors, c.phase_velocities])
    return content_hash(*parts)


@dataclass(frozen=True)
class GHModel:
    """Projection of an observable onto a truncated eigenbasis, plus what is
    needed to evaluate the Nystrom extension anywhere."""

    basis: EigenBasis
    coefficients: np.ndarray
    truncation: int
    training: EmbeddedSeries
    spec: KernelSpec
    in_sample_residual: float

    @property
    def lambda_prime(self) -> np.ndarray:
        """Eigenvalues of the kernel Markov operator for the retained levels."""
        return 1.0 - self.basis.eigenvalues[: self.truncation]


@dataclass(frozen=True)
class LPModel:
    """Multiscale residual decomposition of an observable.

    ``level_targets[l]`` is the vector the level-l smoother acts on: the
    observable itself at level 0, the running residual d_l afterwards.
    """

    training: EmbeddedSeries
    level_specs: tuple[KernelSpec, ...]
    level_targets: tuple[np.ndarray, ...]
    base_values: np.ndarray
    achieved_error: float
    eps_tol: float

    @property
    def n_levels(self) -> int:
        return len(self.level_specs)


# ---------------------------------------------------------------------------
# geometric harmonics


def extension_log_weights(
    training: EmbeddedSeries,
    spec: KernelSpec,
    test: EmbeddedSeries,
    kernel_sums: np.ndarray | None = None,
    alpha: float = 0.0,
) -> np.ndarray:
    """Log analog weights of test points over training points.

    For alpha != 0 the columns are shifted by -alpha * log Q_j, the training
    density factors, which makes the normalized weights consistent with the
    in-sample Markov matrix when a test point coincides with a training
    sample. (The test point's own density factor would cancel in the row
    normalization and is omitted.)
    """
    L = log_cross_matrix(test, training, spec)
    if alpha != 0.0:
        if kernel_sums is None or len(kernel_sums) != training.n_samples:
            raise ValueError("alpha-normalized weights need the training kernel sums")
        L = L - alpha * np.log(kernel_sums)[None, :]
    return L


def normalize_log_rows(log_weights: np.ndarray) -> np.ndarray:
    """Row-stochastic weights from log values, shifted by the row maximum so
    fine-scale kernels cannot underflow an entire row to zero. Rows with no
    finite entry (an empty analog support) are an error."""
    m = np.max(log_weights, axis=1)
    bad = np.flatnonzero(~np.isfinite(m))
    if len(bad):
        raise ValueError(f"no analogs with nonzero weight for test point {bad[0]}")
    W = np.exp(log_weights - m[:, None])
    return W / W.sum(axis=1, keepdims=True)


def default_truncation(basis: EigenBasis, floor: float = CONDITIONING_FLOOR) -> int:
    """Truncate where the kernel-operator eigenvalues have decayed to 1e-3 of
    the first nontrivial one (or fall below the conditioning floor)."""
    lam_prime = 1.0 - basis.eigenvalues
    if basis.l < 2:
        return basis.l
    cut = max(1e-3 * lam_prime[1], floor)
    below = np.flatnonzero(lam_prime < cut)
    return int(below[0]) if len(below) else basis.l


def gh_fit(
    f: np.ndarray,
    basis: EigenBasis,
    training: EmbeddedSeries,
    spec: KernelSpec,
    l_trunc: int | None = None,
    floor: float = CONDITIONING_FLOOR,
) -> GHModel:
    """Project f (one value per training sample) onto the leading l_trunc
    eigenfunctions under the basis's weighted inner product."""
    f = np.asarray(f, dtype=float)
    if f.shape != (basis.n,):
        raise ValueError("observable must have one value per training sample")
    if training.n_samples != basis.n:
        raise ValueError("training series and basis disagree on sample count")
    if l_trunc is None:
        l_trunc = default_truncation(basis, floor)
    if not 1 <= l_trunc <= basis.l:
        raise ValueError(f"l_trunc={l_trunc} outside available basis (l={basis.l})")
    lam_prime = 1.0 - basis.eigenvalues[:l_trunc]
    if np.any(lam_prime < floor):
        j = int(np.flatnonzero(lam_prime < floor)[0])
        raise ValueError(
            f"ill-conditioned level {j}: kernel eigenvalue {lam_prime[j]:.3e} below floor {floor:g}"
        )
    phi = basis.eigenfunctions[:, :l_trunc]
    coeffs = phi.T @ (basis.degree * f)
    residual = float(np.linalg.norm(f - phi @ coeffs))
    return GHModel(basis, coeffs, int(l_trunc), training, spec, residual)


def gh_extension_values(model: GHModel) -> np.ndarray:
    """The vector g with g_k = sum_j c_j phi_j(x_k) / lambda'_j.

    The extension at any point is the row-normalized kernel weights applied
    to g; the forecast path reuses the same vector shifted in time.
    """
    phi = model.basis.eigenfunctions[:, : model.truncation]
    return phi @ (model.coefficients / model.lambda_prime)


def gh_extend(model: GHModel, test: EmbeddedSeries) -> np.ndarray:
    """Nystrom extension of the fitted observable at each test point."""
    logw = extension_log_weights(
        model.training, model.spec, test, model.basis.kernel_sums, model.basis.alpha
    )
    return normalize_log_rows(logw) @ gh_extension_values(model)


def gh_extend_eigenfunction(
    basis: EigenBasis,
    training: EmbeddedSeries,
    spec: KernelSpec,
    test: EmbeddedSeries,
    j: int,
    floor: float = CONDITIONING_FLOOR,
) -> np.ndarray:
    """Extend eigenfunction column j (0-based) to the test points."""
    lam_prime = 1.0 - basis.eigenvalues[j]
    if lam_prime < floor:
        raise ValueError(
            f"ill-conditioned level {j}: kernel eigenvalue {lam_prime:.3e} below floor {floor:g}"
        )
    logw = extension_log_weights(training, spec, test, basis.kernel_sums, basis.alpha)
    return (normalize_log_rows(logw) @ basis.eigenfunctions[:, j]) / lam_prime


# ---------------------------------------------------------------------------
# Laplacian pyramid


def lp_fit(
    f: np.ndarray,
    training: EmbeddedSeries,
    base_spec: KernelSpec,
    eps_tol: float | None = None,
    max_levels: int = 12,
) -> LPModel:
    """Fit the multiscale decomposition until the training reconstruction
    error drops below ``eps_tol`` (default 1e-6 times the norm of f).

    Raises if the tolerance is still unmet after ``max_levels`` dyadic
    refinements, reporting the error actually achieved. The density exponent
    alpha plays no role here; pyramid smoothers are plainly row-normalized.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (training.n_samples,):
        raise ValueError("observable must have one value per training sample")
    if eps_tol is None:
        eps_tol = 1e-6 * float(np.linalg.norm(f))
    if eps_tol < 0:
        raise ValueError("eps_tol must be nonnegative")

    specs: list[KernelSpec] = []
    targets: list[np.ndarray] = []
    approx = np.zeros_like(f)
    err = float(np.linalg.norm(f - approx))
    if err <= eps_tol:
        return LPModel(training, (), (), f, err, eps_tol)
    for spec in multiscale_family(base_spec, max_levels):
        target = f - approx
        W = row_normalize(build_matrix(training, spec))
        approx = approx + W @ target
        specs.append(spec)
        targets.append(target)
        err = float(np.linalg.norm(f - approx))
        if err <= eps_tol:
            break
    else:
        raise RuntimeError(
            f"pyramid tolerance {eps_tol:.3e} unreachable in {max_levels} levels; "
            f"achieved {err:.3e}"
        )
    return LPModel(training, tuple(specs), tuple(targets), f, err, eps_tol)


def lp_extend(model: LPModel, test: EmbeddedSeries) -> np.ndarray:
    """Pyramid extension: sum of each level's kernel-weighted average of its
    target vector. Constant observables extend exactly (weights sum to 1);
    otherwise values reproduce training points to within the fit error only.
    """
    out = np.zeros(test.n_samples)
    for spec, target in zip(model.level_specs, model.level_targets):
        logw = log_cross_matrix(test, model.training, spec)
        out = out + normalize_log_rows(logw) @ target
    return out


# ---------------------------------------------------------------------------
# persistence


def _pack_spec(spec: KernelSpec) -> bytes:
    kinds = {"gaussian": 0, "nlsa": 1, "nlsa-multivariate": 2}
    return struct.pack(
        "<Bddd",
        kinds[spec.kind],
        spec.epsilon if spec.epsilon is not None else np.nan,
        spec.sigma0 if spec.sigma0 is not None else np.nan,
        spec.alpha,
    )


def _unpack_spec(raw: bytes) -> KernelSpec:
    kind_idx, eps, sig, alpha = struct.unpack("<Bddd", raw)
    kinds = {0: "gaussian", 1: "nlsa", 2: "nlsa-multivariate"}
    return KernelSpec(
        kinds[kind_idx],
        epsilon=None if np.isnan(eps) else eps,
        sigma0=None if np.isnan(sig) else sig,
        alpha=alpha,
    )


def save_gh_model(model: GHModel, path) -> None:
    from .laplacian import save_basis

    with open(path, "wb") as fh:
        fh.write(_GHMD_MAGIC)
        fh.write(struct.pack("<H", _MODEL_VERSION))
        fh.write(bytes.fromhex(series_hash(model.training)))
        fh.write(_pack_spec(model.spec))
        fh.write(struct.pack("<Qd", model.truncation, model.in_sample_residual))
        fh.write(np.ascontiguousarray(model.coefficients, dtype="<f8").tobytes())
    save_basis(model.basis, str(path) + ".eigb")


def load_gh_model(path, training: EmbeddedSeries) -> GHModel:
    from .laplacian import load_basis

    with open(path, "rb") as fh:
        if fh.read(4) != _GHMD_MAGIC:
            raise ValueError("not a GHMD file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _MODEL_VERSION:
            raise ValueError(f"unsupported GHMD version {version}")
        train_hash = fh.read(8).hex()
        spec = _unpack_spec(fh.read(struct.calcsize("<Bddd")))
        l_trunc, residual = struct.unpack("<Qd", fh.read(16))
        coeffs = np.frombuffer(fh.read(8 * l_trunc), dtype="<f8").copy()
    if train_hash != series_hash(training):
        raise ValueError("training data hash mismatch; model belongs to other data")
    basis = load_basis(str(path) + ".eigb")
    return GHModel(basis, coeffs, int(l_trunc), training, spec, residual)


def save_lp_model(model: LPModel, path) -> None:
    n = len(model.base_values)
    with open(path, "wb") as fh:
        fh.write(_LPMD_MAGIC)
        fh.write(struct.pack("<H", _MODEL_VERSION))
        fh.write(bytes.fromhex(series_hash(model.training)))
        fh.write(struct.pack("<QQdd", n, model.n_levels, model.achieved_error, model.eps_tol))
        fh.write(np.ascontiguousarray(model.base_values, dtype="<f8").tobytes())
        for spec, target in zip(model.level_specs, model.level_targets):
            fh.write(_pack_spec(spec))
            fh.write(np.ascontiguousarray(target, dtype="<f8").tobytes())


def load_lp_model(path, training: EmbeddedSeries) -> LPModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _LPMD_MAGIC:
            raise ValueError("not an LPMD file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != _MODEL_VERSION:
            raise ValueError(f"unsupported LPMD version {version}")
        train_hash = fh.read(8).hex()
        n, n_levels, achieved, eps_tol = struct.unpack("<QQdd", fh.read(32))
        base = np.frombuffer(fh.read(8 * n), dtype="<f8").copy()
        specs = []
        targets = []
        for _ in range(n_levels):
            specs.append(_unpack_spec(fh.read(struct.calcsize("<Bddd"))))
            targets.append(np.frombuffer(fh.read(8 * n), dtype="<f8").copy())
    if train_hash != series_hash(training):
        raise ValueError("training data hash mismatch; model belongs to other data")
    return LPModel(training, tuple(specs), tuple(targets), base, achieved, eps_tol)
