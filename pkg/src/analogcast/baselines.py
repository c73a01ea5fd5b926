"""Parametric comparison models: stationary AR(1), cluster-switching AR with
a switch budget, Markov transition estimation, affiliation prediction, and
AIC model selection.

The cluster model alternates (a) per-cluster least squares given the
affiliation sequence with (b) a dynamic-programming reassignment that
minimizes the total squared residual subject to a budget on the number of
switches. This is a simplified, hard-affiliation stand-in for the
finite-element regularized clustering it is patterned after; it keeps the
same interface (K clusters, switch budget C, affiliation sequence, per-
cluster coefficients).

Affiliation labels are 1-based (values 1..K) everywhere; label at step t
selects the coefficients advancing x(t) to x(t+1).

Model files are plain-text ``key = value``; the affiliation sequence is
run-length encoded.
"""

from dataclasses import dataclass

import numpy as np

from .metrics import SkillCurves, pc_curve, rmse_curve

MAX_RESTARTS = 10
MIN_CLUSTER_OCCUPANCY = 10
_SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class ARModel:
    """x(t+1) = mu + coef * x(t) + sigma * eps(t)."""

    mu: float
    coef: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0 or not np.all(np.isfinite([self.mu, self.coef, self.sigma])):
            raise ValueError("AR coefficients must be finite with sigma >= 0")


@dataclass(frozen=True)
class ClusterARModel:
    """Per-cluster AR(1) coefficients with a fitted affiliation sequence.

    ``centers`` holds each cluster's mean training value, used to assign an
    initial regime to a new point by plain distance.
    """

    n_clusters: int
    mu: np.ndarray
    coef: np.ndarray
    sigma: np.ndarray
    affiliation: np.ndarray
    switch_budget: int
    transition_matrix: np.ndarray
    aic: float
    centers: np.ndarray | None = None

    def __post_init__(self):
        gamma = np.asarray(self.affiliation, dtype=np.int64)
        if gamma.min() < 1 or gamma.max() > self.n_clusters:
            raise ValueError("affiliation labels must lie in 1..K")
        if count_switches(gamma) > self.switch_budget:
            raise ValueError("affiliation sequence exceeds the switch budget")
        T = np.asarray(self.transition_matrix, dtype=float)
        if not np.allclose(T.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("transition matrix must be row-stochastic")
        object.__setattr__(self, "affiliation", gamma)

    @property
    def n_switches(self) -> int:
        return count_switches(self.affiliation)


@dataclass(frozen=True)
class AffiliationForecast:
    """Future cluster membership: either deterministically propagated
    probabilities or one sampled realization with strict membership."""

    mode: str
    pi: np.ndarray | None = None
    gamma: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in ("deterministic-pi", "realization"):
            raise ValueError("mode must be 'deterministic-pi' or 'realization'")
        if self.pi is not None:
            pi = np.asarray(self.pi, dtype=float)
            if np.any(pi < -1e-12) or not np.allclose(pi.sum(axis=-1), 1.0, atol=1e-9):
                raise ValueError("pi rows must be probability vectors")


def count_switches(gamma: np.ndarray) -> int:
    gamma = np.asarray(gamma)
    return int(np.count_nonzero(np.diff(gamma))) if len(gamma) > 1 else 0


# ---------------------------------------------------------------------------
# fitting


def _series_values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=float)


def fit_stationary_ar(x) -> ARModel:
    """Ordinary least squares fit of (mu, coef); sigma is the residual RMS."""
    v = _series_values(x)
    if len(v) < 3:
        raise ValueError("need at least 3 samples to fit an AR model")
    prev, nxt = v[:-1], v[1:]
    if np.var(prev) <= 0:
        raise ValueError("constant series: AR fit is degenerate")
    design = np.column_stack([np.ones(len(prev)), prev])
    (mu, coef), *_ = np.linalg.lstsq(design, nxt, rcond=None)
    resid = nxt - mu - coef * prev
    return ARModel(float(mu), float(coef), float(np.sqrt(np.mean(resid**2))))


def _cluster_ols(prev, nxt, gamma, K):
    """Per-cluster least squares; returns (mu, coef, sigma) arrays, or None
    when any cluster falls below the minimum occupancy.

    The occupancy guard (10 samples, mirroring the N >= 10K fitting
    precondition) exists because a near-empty cluster fits its few points
    exactly, sending sigma to zero and making the Gaussian likelihood
    meaningless for model comparison.
    """
    min_occ = MIN_CLUSTER_OCCUPANCY if K > 1 else 1
    mu = np.empty(K)
    coef = np.empty(K)
    sigma = np.empty(K)
    for k in range(K):
        sel = gamma == k + 1
        cnt = np.count_nonzero(sel)
        if cnt < min_occ:
            return None
        if np.var(prev[sel]) <= 0:
            mu[k] = np.mean(nxt[sel])
            coef[k] = 0.0
        else:
            design = np.column_stack([np.ones(cnt), prev[sel]])
            (mu[k], coef[k]), *_ = np.linalg.lstsq(design, nxt[sel], rcond=None)
        resid = nxt[sel] - mu[k] - coef[k] * prev[sel]
        sigma[k] = np.sqrt(np.mean(resid**2))
    return mu, coef, sigma


def _assign_affiliation(costs: np.ndarray, budget: int) -> np.ndarray:
    """Minimum-total-cost label path with at most ``budget`` switches.

    costs has shape (K, T): squared residual of each cluster model at each
    step. Dynamic program over (switches used so far, current label); the
    switch move into label k comes from the previous stage's best label
    other than k, so both the best and second-best are tracked.
    """
    K, T = costs.shape
    labels_k = np.arange(K)
    best = np.full((budget + 1, K), np.inf)
    best[0] = costs[:, 0]
    choice = np.empty((T, budget + 1, K), dtype=np.int8)
    choice[0] = labels_k
    for t in range(1, T):
        new = best.copy()
        choice[t] = labels_k
        if budget > 0 and K > 1:
            order = np.argsort(best, axis=1)
            rows = np.arange(budget + 1)
            min1_idx, min2_idx = order[:, 0], order[:, 1]
            min1, min2 = best[rows, min1_idx], best[rows, min2_idx]
            # entering label k with one extra switch: best previous label != k
            sw_val = np.where(min1_idx[:-1, None] != labels_k, min1[:-1, None], min2[:-1, None])
            sw_src = np.where(min1_idx[:-1, None] != labels_k, min1_idx[:-1, None], min2_idx[:-1, None])
            better = sw_val < new[1:]
            new[1:][better] = sw_val[better]
            choice[t, 1:][better] = sw_src[better]
        best = new + costs[:, t]
    flat = int(np.argmin(best))
    c, k = divmod(flat, K)
    labels = np.empty(T, dtype=np.int64)
    labels[-1] = k
    for t in range(T - 1, 0, -1):
        k_prev = int(choice[t, c, labels[t]])
        if k_prev != labels[t]:
            c -= 1
        labels[t - 1] = k_prev
    return labels + 1


def fit_cluster_ar(x, n_clusters: int, switch_budget: int, seed: int = 0) -> ClusterARModel:
    """Coordinate descent between per-cluster OLS and budgeted affiliation
    reassignment; restarts with perturbed initialization when a cluster
    empties (or drops below the minimum occupancy), and fails after
    MAX_RESTARTS attempts."""
    v = _series_values(x)
    K, C = int(n_clusters), int(switch_budget)
    if K < 1 or C < 0:
        raise ValueError("need n_clusters >= 1 and switch_budget >= 0")
    if len(v) < 10 * K:
        raise ValueError(f"need at least {10 * K} samples for K={K} clusters")
    prev, nxt = v[:-1], v[1:]
    T = len(prev)

    if K == 1:
        base = fit_stationary_ar(v)
        gamma = np.ones(T, dtype=np.int64)
        return ClusterARModel(
            1,
            np.array([base.mu]),
            np.array([base.coef]),
            np.array([base.sigma]),
            gamma,
            C,
            np.ones((1, 1)),
            _aic_value(np.array([base.sigma]), gamma, 1),
            centers=np.array([prev.mean()]),
        )

    rng = np.random.default_rng(seed)
    for restart in range(MAX_RESTARTS):
        jitter = 0.0 if restart == 0 else rng.standard_normal(T) * (v.std() * 0.5)
        ranks = np.argsort(np.argsort(prev + jitter))
        gamma = (ranks * K // T).astype(np.int64) + 1
        fitted = _cluster_ols(prev, nxt, gamma, K)
        if fitted is None:
            continue
        last_objective = np.inf
        for _ in range(100):
            mu, coef, sigma = fitted
            resid = nxt[None, :] - mu[:, None] - coef[:, None] * prev[None, :]
            costs = resid**2
            new_gamma = _assign_affiliation(costs, C)
            objective = float(costs[new_gamma - 1, np.arange(T)].sum())
            if objective > last_objective + 1e-9 * max(1.0, last_objective):
                raise RuntimeError("cluster fit objective increased; descent is broken")
            refitted = _cluster_ols(prev, nxt, new_gamma, K)
            if refitted is None:
                fitted = None
                break
            converged = np.array_equal(new_gamma, gamma)
            gamma, fitted, last_objective = new_gamma, refitted, objective
            if converged:
                break
        if fitted is None:
            continue
        mu, coef, sigma = fitted
        try:
            T_hat = estimate_transition_matrix(gamma, K)
        except ValueError:
            continue
        centers = np.array([prev[gamma == k + 1].mean() for k in range(K)])
        return ClusterARModel(
            K, mu, coef, sigma, gamma, C, T_hat, _aic_value(sigma, gamma, K), centers=centers
        )
    raise RuntimeError(
        f"cluster fit failed after {MAX_RESTARTS} restarts (empty or underpopulated clusters)"
    )


def estimate_transition_matrix(gamma, n_states: int | None = None) -> np.ndarray:
    """Row-normalized direct transition counts of the affiliation sequence."""
    gamma = np.asarray(gamma, dtype=np.int64)
    K = int(n_states) if n_states else int(gamma.max())
    counts = np.zeros((K, K))
    np.add.at(counts, (gamma[:-1] - 1, gamma[1:] - 1), 1.0)
    outgoing = counts.sum(axis=1)
    missing = np.flatnonzero(outgoing == 0)
    if len(missing):
        raise ValueError(f"state {missing[0] + 1} has no outgoing transitions")
    return counts / outgoing[:, None]


# ---------------------------------------------------------------------------
# affiliation prediction


def predict_affiliation_deterministic(pi0, T, tau: int) -> np.ndarray:
    """pi(tau) = pi0 T^tau."""
    pi = np.asarray(pi0, dtype=float)
    T = np.asarray(T, dtype=float)
    for _ in range(int(tau)):
        pi = pi @ T
    return pi


def forecast_affiliation_pi(pi0, T, tau_max: int) -> AffiliationForecast:
    """Deterministic probability propagation over 0..tau_max."""
    T = np.asarray(T, dtype=float)
    pi = np.empty((tau_max + 1, len(T)))
    pi[0] = np.asarray(pi0, dtype=float)
    for t in range(tau_max):
        pi[t + 1] = pi[t] @ T
    return AffiliationForecast("deterministic-pi", pi=pi)


def predict_affiliation_realization(pi0, T, tau_max: int, seed: int) -> np.ndarray:
    """One sampled path of the switching process (labels 1..K)."""
    T = np.asarray(T, dtype=float)
    rng = np.random.default_rng(seed)
    pi0 = np.asarray(pi0, dtype=float)
    gamma = np.empty(tau_max + 1, dtype=np.int64)
    gamma[0] = np.searchsorted(np.cumsum(pi0), rng.random(), side="right")
    cum = np.cumsum(T, axis=1)
    draws = rng.random(tau_max)
    for t in range(tau_max):
        gamma[t + 1] = np.searchsorted(cum[gamma[t]], draws[t], side="right")
    return gamma + 1


def forecast_affiliation_realization(pi0, T, tau_max: int, seed: int) -> AffiliationForecast:
    gamma = predict_affiliation_realization(pi0, T, tau_max, seed)
    return AffiliationForecast("realization", gamma=gamma, seed=seed)


def initial_affiliation(model: ClusterARModel, x0: float) -> int:
    """Cluster whose center (mean training value) is closest to x0.

    Deliberately a function of the initial value alone: giving the scalar
    regime model any trajectory information here would smuggle in state the
    parametric baseline is not supposed to have.
    """
    if model.centers is None:
        raise ValueError("model carries no cluster centers")
    return int(np.argmin(np.abs(model.centers - x0))) + 1


# ---------------------------------------------------------------------------
# forecasting


def ar_forecast(model, x0: float, tau: int, noise_seed: int | None = None, affiliation=None):
    """Iterate the model tau steps from x0; returns the trajectory of length
    tau + 1 (noise off gives the conditional-mean forecast).

    For cluster models, ``affiliation`` supplies the coefficients per step:
    an :class:`AffiliationForecast` (probabilities are blended into the
    coefficients before stepping) or a plain label sequence of length >= tau.
    """
    tau = int(tau)
    traj = np.empty(tau + 1)
    traj[0] = float(x0)
    noise = (
        np.zeros(tau)
        if noise_seed is None
        else np.random.default_rng(noise_seed).standard_normal(tau)
    )
    if isinstance(model, ARModel):
        for t in range(tau):
            traj[t + 1] = model.mu + model.coef * traj[t] + model.sigma * noise[t]
        return traj
    if not isinstance(model, ClusterARModel):
        raise TypeError("model must be an ARModel or ClusterARModel")
    if affiliation is None:
        raise ValueError("cluster model forecasts need an affiliation scheme")
    if isinstance(affiliation, AffiliationForecast):
        if affiliation.mode == "deterministic-pi":
            pi = affiliation.pi
            if pi is None or len(pi) < tau + 1:
                raise ValueError("affiliation probabilities shorter than the forecast")
            for t in range(tau):
                mu = pi[t] @ model.mu
                coef = pi[t] @ model.coef
                sigma = pi[t] @ model.sigma
                traj[t + 1] = mu + coef * traj[t] + sigma * noise[t]
            return traj
        labels = affiliation.gamma
    else:
        labels = np.asarray(affiliation, dtype=np.int64)
    if labels is None or len(labels) < tau:
        raise ValueError("affiliation labels shorter than the forecast")
    for t in range(tau):
        k = labels[t] - 1
        traj[t + 1] = model.mu[k] + model.coef[k] * traj[t] + model.sigma[k] * noise[t]
    return traj


def potential_predictability(model: ClusterARModel, x, leads, dt: int = 1) -> SkillCurves:
    """Skill over the training period with the fitted affiliation sequence
    treated as known: the upper bound a switching model could reach if the
    regime path were predicted perfectly."""
    v = _series_values(x)
    leads = np.asarray(leads, dtype=np.int64)
    if np.any(leads % dt):
        raise ValueError("leads must be whole numbers of samples")
    steps = leads // dt
    gamma = model.affiliation
    n = len(v)
    tau_max = int(steps.max())
    if tau_max > len(gamma):
        raise ValueError("largest lead exceeds the fitted affiliation record")
    # cur[j] holds the forecast launched at sample j after t steps; launches
    # with j + t beyond the record go stale and are never read again
    cur = v.copy()
    preds = np.full((n, len(leads)), np.nan)
    truth = np.full((n, len(leads)), np.nan)
    lead_of_step = {int(s): i for i, s in enumerate(steps)}
    if 0 in lead_of_step:
        preds[:, lead_of_step[0]] = v
        truth[:, lead_of_step[0]] = v
    for t in range(1, tau_max + 1):
        m = n - t
        k = gamma[np.arange(m) + (t - 1)] - 1
        cur[:m] = model.mu[k] + model.coef[k] * cur[:m]
        if t in lead_of_step:
            col = lead_of_step[t]
            preds[:m, col] = cur[:m]
            truth[:m, col] = v[t:]
    return SkillCurves(
        leads=leads,
        rmse=rmse_curve(preds, truth),
        pc=pc_curve(preds, truth),
        n_used=(~np.isnan(truth)).sum(axis=0),
        method="cluster-ar-potential",
        truth_mode="training-direct",
    )


# ---------------------------------------------------------------------------
# model selection


def _aic_value(sigma: np.ndarray, gamma: np.ndarray, K: int) -> float:
    """AIC = 2p - 2 ln L with p = 3K + number of switches.

    ln L is the fitted switching model's likelihood: Gaussian residuals
    under each cluster's sigma times the Markov path probability of the
    affiliation sequence under its own estimated transition matrix. The
    path term is what keeps freely placed switches from being free lunch:
    a rare switch contributes ln of a small transition probability. For
    K = 1 the path term vanishes and the value reduces to the stationary
    AR's AIC.
    """
    sigma = np.maximum(np.asarray(sigma, dtype=float), _SIGMA_FLOOR)
    counts = np.array([np.count_nonzero(gamma == k + 1) for k in range(K)])
    # residual sum within each cluster is counts * sigma^2 by construction
    log_lik = float(np.sum(-0.5 * counts * np.log(2 * np.pi * sigma**2) - 0.5 * counts))
    if K > 1:
        T = estimate_transition_matrix(gamma, K)
        trans = np.zeros((K, K))
        np.add.at(trans, (gamma[:-1] - 1, gamma[1:] - 1), 1.0)
        with np.errstate(divide="ignore"):
            log_T = np.where(trans > 0, np.log(np.maximum(T, 1e-300)), 0.0)
        log_lik += float(np.sum(trans * log_T))
    p = 3 * K + count_switches(gamma)
    return 2.0 * p - 2.0 * log_lik


def stationary_aic(model: ARModel, x) -> float:
    v = _series_values(x)
    gamma = np.ones(len(v) - 1, dtype=np.int64)
    return _aic_value(np.array([model.sigma]), gamma, 1)


def aic_select(x, k_range, c_range, seed: int = 0):
    """Fit the (K, C) grid and return (best K, best C, score table).

    The table rows are (K, C, aic, n_switches); K = 1 is scored once with
    C = 0 and matches the stationary fit's AIC by construction.
    """
    k_range = list(k_range)
    c_range = list(c_range)
    if not k_range or not c_range:
        raise ValueError("K and C ranges must be non-empty")
    table = []
    for K in k_range:
        budgets = [0] if K == 1 else c_range
        for C in budgets:
            try:
                model = fit_cluster_ar(x, K, C, seed=seed)
            except RuntimeError:
                # no valid K-cluster model at this budget (degenerate fits)
                table.append((K, C, float("inf"), -1))
                continue
            table.append((K, C, model.aic, model.n_switches))
    best = min(table, key=lambda row: row[2])
    if not np.isfinite(best[2]):
        raise RuntimeError("no feasible model in the (K, C) grid")
    return best[0], best[1], table


# ---------------------------------------------------------------------------
# model files


def _rle(gamma: np.ndarray) -> str:
    runs = []
    start = 0
    for i in range(1, len(gamma) + 1):
        if i == len(gamma) or gamma[i] != gamma[start]:
            runs.append(f"{gamma[start]}x{i - start}")
            start = i
    return ";".join(runs)


def _rle_decode(text: str) -> np.ndarray:
    out = []
    for run in text.split(";"):
        label, count = run.split("x")
        out.extend([int(label)] * int(count))
    return np.asarray(out, dtype=np.int64)


def save_cluster_model(model: ClusterARModel, path, config_hash: str = "") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if config_hash:
            fh.write(f"# config={config_hash}\n")
        fh.write(f"n_clusters = {model.n_clusters}\n")
        fh.write(f"switch_budget = {model.switch_budget}\n")
        fh.write(f"aic = {model.aic!r}\n")
        fh.write("mu = " + " ".join(repr(float(v)) for v in model.mu) + "\n")
        fh.write("coef = " + " ".join(repr(float(v)) for v in model.coef) + "\n")
        fh.write("sigma = " + " ".join(repr(float(v)) for v in model.sigma) + "\n")
        if model.centers is not None:
            fh.write("centers = " + " ".join(repr(float(v)) for v in model.centers) + "\n")
        for i, row in enumerate(model.transition_matrix):
            fh.write(f"T_{i + 1} = " + " ".join(repr(float(v)) for v in row) + "\n")
        fh.write(f"affiliation_rle = {_rle(model.affiliation)}\n")


def load_cluster_model(path) -> ClusterARModel:
    fields = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
    K = int(fields["n_clusters"])
    T = np.array([[float(v) for v in fields[f"T_{i + 1}"].split()] for i in range(K)])
    centers = None
    if "centers" in fields:
        centers = np.array([float(v) for v in fields["centers"].split()])
    return ClusterARModel(
        K,
        np.array([float(v) for v in fields["mu"].split()]),
        np.array([float(v) for v in fields["coef"].split()]),
        np.array([float(v) for v in fields["sigma"].split()]),
        _rle_decode(fields["affiliation_rle"]),
        int(fields["switch_budget"]),
        T,
        float(fields["aic"]),
        centers=centers,
    )
