"""Experiment driver: ``analogcast <subcommand> --config <file> [--out <dir>]``.

Subcommands
-----------
synth      generate synthetic train/test records and write them to disk
decompose  embed, build the kernel, solve the eigenbasis, classify modes
forecast   fit extension models and write forecast runs per method/nN
evaluate   turn runs into skill curves, a horizon table, and figures
baseline   fit AR / cluster-AR models, AIC table, baseline forecast runs

All randomness derives from the one configured seed through named
substreams, every tabular output carries the config hash in a comment line,
and identical (config, seed) runs are byte-identical. The eigenbasis is
cached by content hash; a cache hit cannot change results.
"""

import argparse
import json
import sys
import zlib
from pathlib import Path

import numpy as np

from . import baselines, dataset, embedding, forecast, kernels, laplacian, metrics, ose, plots
from .config import ExperimentConfig, config_hash, parse_config


def substream(seed: int, name: str) -> np.random.Generator:
    """Named child stream of the experiment seed."""
    key = zlib.crc32(name.encode())
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


# ---------------------------------------------------------------------------
# pipeline pieces


def _generate(cfg: ExperimentConfig):
    """Synthetic train/test datasets from the configured generator (one long
    record split by index) plus generator metadata."""
    params = cfg.generator_params
    if cfg.generator == "modulated-field":
        rng_seed = int(substream(cfg.seed, "generator").integers(2**31))
        data, meta = dataset.synth_modulated_field(
            params["d"],
            params["n_samples"],
            periods=params["periods"],
            seed=rng_seed,
            noise=params["noise"],
            intermittent=params["intermittent"],
            phase_diffusion=params.get("phase_diffusion", 0.0),
        )
    elif cfg.generator == "regime-ar":
        rng_seed = int(substream(cfg.seed, "generator").integers(2**31))
        K = len(params["mu"])
        p = params["persist"]
        T = np.full((K, K), (1 - p) / max(K - 1, 1))
        np.fill_diagonal(T, p)
        states = list(zip(params["mu"], params["coef"], params["sigma"]))
        obs, labels = dataset.synth_regime_ar(states, T, params["n_samples"], rng_seed)
        data = dataset.Dataset(
            obs.values[:, None], obs.timestamps, obs.dt, "regime-ar", cell_areas=np.ones(1)
        )
        meta = {"affiliation": labels, "transition_matrix": T}
    else:
        raise ValueError(f"unknown generator {cfg.generator!r}")
    n_train = int(round(cfg.train_fraction * data.n_samples))
    return [data.slice(0, n_train)], [data.slice(n_train, data.n_samples)], meta


def _load_data(cfg: ExperimentConfig):
    if cfg.generator:
        train, test, _ = _generate(cfg)
        return train, test
    train = [dataset.load_dataset(p, cfg.data_format) for p in cfg.train_paths]
    test = [dataset.load_dataset(p, cfg.data_format) for p in cfg.test_paths]
    return train, test


def _embed_all(cfg: ExperimentConfig, datasets) -> embedding.EmbeddedSeries:
    windows = cfg.windows
    if len(windows) == 1 and len(datasets) > 1:
        windows = windows * len(datasets)
    if len(windows) != len(datasets):
        raise ValueError("need one embedding window per variable")
    series = [
        embedding.with_phase_velocities(embedding.embed(ds, q))
        for ds, q in zip(datasets, windows)
    ]
    return embedding.join(series)


def _kernel_spec(cfg: ExperimentConfig, train: embedding.EmbeddedSeries) -> kernels.KernelSpec:
    kind = cfg.kernel_kind
    if kind == "nlsa" and len(train.components) > 1:
        kind = "nlsa-multivariate"
    if kind == "gaussian":
        policy = cfg.sigma0
        if policy == "median-sq":
            sigma0 = kernels.median_pairwise_sq_distance(train)
        elif policy == "median":
            sigma0 = kernels.median_pairwise_distance(train)
        else:
            sigma0 = float(policy)
        return kernels.KernelSpec("gaussian", sigma0=sigma0, alpha=cfg.alpha)
    return kernels.KernelSpec(kind, epsilon=cfg.epsilon, alpha=cfg.alpha)


def _basis_cache_key(train, spec, l) -> str:
    from ._hashing import content_hash

    return content_hash(ose.series_hash(train), repr(spec), l)


def _get_basis(cfg, train, spec, out_dir: Path) -> laplacian.EigenBasis:
    """Load the eigenbasis from cache or build it; cache key is the content
    hash of (training data, kernel spec, l)."""
    key = _basis_cache_key(train, spec, cfg.n_eigenfunctions)
    cache = out_dir / f"basis_{key}.eigb"
    if cache.exists():
        return laplacian.load_basis(cache)
    K = kernels.build_matrix(train, spec)
    basis = laplacian.decompose(K, cfg.alpha, cfg.n_eigenfunctions)
    laplacian.save_basis(basis, cache)
    return basis


def _diagnostics(basis: laplacian.EigenBasis, dt: int):
    return [laplacian.mode_diagnostics(basis.eigenfunctions[:, i], dt) for i in range(basis.l)]


def _pick_low_frequency(diags) -> int:
    """0-based index of the first nontrivial mode classified low-frequency;
    falls back to the first intermittent, then the first nontrivial mode.
    The constant mode (index 0) is never an observable."""
    for i, d in enumerate(diags):
        if i > 0 and d.classification == "low-frequency":
            return i
    for i, d in enumerate(diags):
        if i > 0 and d.classification == "intermittent":
            return i
    return min(1, len(diags) - 1)


def _anomaly_on_embedded(ds: dataset.Dataset, clim, emb: embedding.EmbeddedSeries) -> np.ndarray:
    anom = dataset.integrated_anomaly(ds, clim)
    idx = np.searchsorted(anom.timestamps, emb.timestamps)
    return anom.values[idx]


def _observable(cfg, train_data, test_data, train_emb, test_emb, basis, spec):
    """Returns (f on training samples, truth matrix on test samples,
    truth_mode label, models dict)."""
    models: dict = {}
    if cfg.observable.startswith("eigenfunction:"):
        token = cfg.observable.split(":", 1)[1]
        if token == "auto":
            idx = _pick_low_frequency(_diagnostics(basis, train_emb.dt))
        else:
            idx = int(token) - 1  # config indices are 1-based, phi_1 trivial
        if not 0 <= idx < basis.l:
            raise ValueError(f"eigenfunction index {token} outside the computed basis")
        f_train = basis.eigenfunctions[:, idx].copy()
        truth_mode = "ose-gh"
    elif cfg.observable == "integrated-anomaly":
        src_train = next((d for d in train_data if d.cell_areas is not None), None)
        src_test = next((d for d in test_data if d.cell_areas is not None), None)
        if src_train is None or src_test is None:
            raise ValueError("integrated-anomaly needs cell areas on some variable")
        clim = dataset.monthly_climatology(dataset.integrated_extent(src_train))
        f_train = _anomaly_on_embedded(src_train, clim, train_emb)
        truth_mode = "direct"
    else:
        raise ValueError(f"unknown observable {cfg.observable!r}")

    models["gh"] = ose.gh_fit(f_train, basis, train_emb, spec, l_trunc=cfg.l_trunc)
    eps_tol = cfg.eps_tol_factor * float(np.linalg.norm(f_train))
    models["lp"] = ose.lp_fit(f_train, train_emb, spec, eps_tol=eps_tol, max_levels=cfg.max_levels)

    if truth_mode == "ose-gh":
        truth = metrics.truth_ose(test_emb, models["gh"], cfg.leads)
    else:
        anom_test = _anomaly_on_embedded(src_test, clim, test_emb)
        truth = metrics.truth_direct(anom_test, cfg.leads, test_emb.dt)
    return f_train, truth, truth_mode, models


def _prepare(cfg):
    train_data, test_data = _load_data(cfg)
    train_emb = _embed_all(cfg, train_data)
    test_emb = _embed_all(cfg, test_data)
    spec = _kernel_spec(cfg, train_emb)
    return train_data, test_data, train_emb, test_emb, spec


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(cfg: ExperimentConfig, out_dir: Path) -> int:
    if not cfg.generator:
        raise ValueError("synth needs a generator in the [data] section")
    train, test, meta = _generate(cfg)
    dataset.save_dataset(train[0], out_dir / "train_synthetic.acst")
    dataset.save_dataset(test[0], out_dir / "test_synthetic.acst")
    summary = {
        "config": config_hash(cfg),
        "generator": cfg.generator,
        "params": {k: repr(v) for k, v in cfg.generator_params.items()},
        "formula": meta.get("formula", ""),
        "n_train": train[0].n_samples,
        "n_test": test[0].n_samples,
    }
    (out_dir / "synth_metadata.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(f"wrote train ({train[0].n_samples}) and test ({test[0].n_samples}) records to {out_dir}")
    return 0


def cmd_decompose(cfg: ExperimentConfig, out_dir: Path) -> int:
    _, _, train_emb, _, spec = _prepare(cfg)
    basis = _get_basis(cfg, train_emb, spec, out_dir)
    diags = _diagnostics(basis, train_emb.dt)
    chash = config_hash(cfg)
    with open(out_dir / "modes.csv", "w", encoding="utf-8") as fh:
        fh.write(f"# config={chash}\n")
        fh.write("index,eigenvalue,classification,dominant_period_months\n")
        for i, diag in enumerate(diags):
            fh.write(
                f"{i + 1},{float(basis.eigenvalues[i])!r},{diag.classification},"
                f"{diag.dominant_period!r}\n"
            )
    if cfg.figures:
        plots.plot_mode_diagnostics(
            basis, diags, train_emb.timestamps, train_emb.dt, out_dir / "fig_modes.png",
            config_hash=chash,
        )
    counts = {}
    for d in diags:
        counts[d.classification] = counts.get(d.classification, 0) + 1
    print(f"eigenbasis l={basis.l} cached; mode classes: {counts}")
    return 0


def _run_name(method: str, nn) -> str:
    return f"{method}_nn{'all' if nn is None else nn}"


def cmd_forecast(cfg: ExperimentConfig, out_dir: Path) -> int:
    train_data, test_data, train_emb, test_emb, spec = _prepare(cfg)
    basis = _get_basis(cfg, train_emb, spec, out_dir)
    _, truth, truth_mode, models = _observable(
        cfg, train_data, test_data, train_emb, test_emb, basis, spec
    )
    chash = config_hash(cfg)
    ose.save_gh_model(models["gh"], out_dir / "model_gh.ghmd")
    ose.save_lp_model(models["lp"], out_dir / "model_lp.lpmd")
    lead0 = truth[:, cfg.leads.index(0)] if 0 in cfg.leads else truth[:, 0]
    written = []
    for method in cfg.methods:
        nn_values = cfg.nn_list if method.startswith("keaf") else [None]
        for nn in nn_values:
            run = forecast.run_forecasts(method, models, test_emb, cfg.leads, nn, lead0_truth=lead0)
            name = _run_name(method, nn)
            forecast.save_run_csv(run, truth, out_dir / f"run_{name}.csv", chash)
            forecast.save_run_binary(run, truth, out_dir / f"run_{name}.bin", chash)
            if cfg.figures:
                plots.plot_forecast_snapshots(
                    run, truth, out_dir / f"fig_run_{name}.png", config_hash=chash
                )
            written.append(name)
    print(f"forecast runs ({truth_mode} truth): {', '.join(written)}")
    return 0


def cmd_evaluate(cfg: ExperimentConfig, out_dir: Path) -> int:
    run_files = sorted(out_dir.glob("run_*.bin"))
    if not run_files:
        raise FileNotFoundError(f"no forecast runs under {out_dir}; run `forecast` first")
    chash = config_hash(cfg)
    truth_mode = "ose-gh" if cfg.observable.startswith("eigenfunction") else "direct"
    for path in run_files:
        run, truth, _ = forecast.load_run_binary(path)
        curves = metrics.skill_curves(run, truth, truth_mode)
        name = path.stem.removeprefix("run_")
        metrics.save_skill_csv(curves, out_dir / f"skill_{name}.csv", chash)
    all_curves = [metrics.load_skill_csv(p) for p in sorted(out_dir.glob("skill_*.csv"))]
    with open(out_dir / "horizon_summary.csv", "w", encoding="utf-8") as fh:
        fh.write(f"# config={chash}\n")
        fh.write("method,truth_mode,pc_threshold,horizon_months\n")
        for curves in all_curves:
            h = metrics.horizon(curves.pc, cfg.pc_threshold, curves.leads)
            fh.write(
                f"{curves.method},{curves.truth_mode},{cfg.pc_threshold!r},"
                f"{'beyond-range' if h is None else h}\n"
            )
    if cfg.figures:
        plots.plot_skill_curves(
            all_curves, out_dir / "fig_skill.png", cfg.pc_threshold, title=cfg.observable,
            config_hash=chash,
        )
    print(f"evaluated {len(all_curves)} skill curves; horizon table written")
    return 0


def cmd_baseline(cfg: ExperimentConfig, out_dir: Path) -> int:
    train_data, test_data, train_emb, test_emb, spec = _prepare(cfg)
    basis = _get_basis(cfg, train_emb, spec, out_dir)
    f_train, truth, truth_mode, _ = _observable(
        cfg, train_data, test_data, train_emb, test_emb, basis, spec
    )
    chash = config_hash(cfg)
    leads = np.asarray(cfg.leads, dtype=np.int64)
    tau_max = int(leads.max())
    f_test = truth[:, list(leads).index(0)] if 0 in leads else None
    if f_test is None:
        raise ValueError("baseline forecasts need lead 0 in the lead grid")

    init_idx = np.arange(len(f_test))
    runs = []

    if "ar-stationary" in cfg.baseline_methods:
        model = baselines.fit_stationary_ar(f_train)
        with open(out_dir / "model_ar_stationary.txt", "w", encoding="utf-8") as fh:
            fh.write(f"# config={chash}\n")
            fh.write(f"mu = {model.mu!r}\ncoef = {model.coef!r}\nsigma = {model.sigma!r}\n")
            fh.write(f"aic = {baselines.stationary_aic(model, f_train)!r}\n")
        preds = np.empty((len(init_idx), len(leads)))
        for row, j in enumerate(init_idx):
            traj = baselines.ar_forecast(model, f_test[j], tau_max)
            preds[row] = traj[leads]
        runs.append(("ar-stationary", preds))

    if "cluster-ar" in cfg.baseline_methods:
        fit_seed = int(substream(cfg.seed, "cluster-fit").integers(2**31))
        k_best, c_best, table = baselines.aic_select(f_train, cfg.k_range, cfg.c_range, fit_seed)
        with open(out_dir / "aic_table.csv", "w", encoding="utf-8") as fh:
            fh.write(f"# config={chash}\n")
            fh.write("K,C,aic,n_switches\n")
            for K, C, aic, sw in table:
                fh.write(f"{K},{C},{aic!r},{sw}\n")
        model = baselines.fit_cluster_ar(f_train, cfg.n_clusters, cfg.switch_budget, fit_seed)
        baselines.save_cluster_model(model, out_dir / "model_cluster_ar.txt", chash)
        print(f"AIC selects K={k_best}, C={c_best}; fitted K={cfg.n_clusters}")

        T = model.transition_matrix
        preds_pi = np.empty((len(init_idx), len(leads)))
        preds_real = np.empty((len(init_idx), len(leads)))
        real_rng = substream(cfg.seed, "realizations")
        for row, j in enumerate(init_idx):
            k0 = baselines.initial_affiliation(model, f_test[j])
            pi0 = np.zeros(model.n_clusters)
            pi0[k0 - 1] = 1.0
            aff_pi = baselines.forecast_affiliation_pi(pi0, T, tau_max)
            preds_pi[row] = baselines.ar_forecast(model, f_test[j], tau_max, affiliation=aff_pi)[leads]
            aff_real = baselines.forecast_affiliation_realization(
                pi0, T, tau_max, int(real_rng.integers(2**31))
            )
            preds_real[row] = baselines.ar_forecast(model, f_test[j], tau_max, affiliation=aff_real)[
                leads
            ]
        runs.append(("cluster-ar-pi", preds_pi))
        runs.append(("cluster-ar-realization", preds_real))

        potential = baselines.potential_predictability(model, f_train, cfg.leads, train_emb.dt)
        metrics.save_skill_csv(potential, out_dir / "skill_cluster-ar-potential.csv", chash)

    truth_ic = truth[init_idx]
    for method, preds in runs:
        run = forecast.ForecastRun(
            method, leads, preds, test_emb.timestamps[init_idx], {"observable": cfg.observable}
        )
        name = _run_name(method, None)
        forecast.save_run_csv(run, truth_ic, out_dir / f"run_{name}.csv", chash)
        forecast.save_run_binary(run, truth_ic, out_dir / f"run_{name}.bin", chash)
    print(f"baseline runs: {', '.join(m for m, _ in runs)} ({truth_mode} truth)")
    return 0


# ---------------------------------------------------------------------------


_COMMANDS = {
    "synth": cmd_synth,
    "decompose": cmd_decompose,
    "forecast": cmd_forecast,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="analogcast",
        description="Kernel ensemble analog forecasting experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
    args = parser.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        out_dir = Path(args.out) if args.out else cfg.out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out_dir)
    except Exception as exc:  # surface stage-tagged, nonzero exit
        print(f"analogcast {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
