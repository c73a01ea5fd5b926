"""Experiment configuration: one plain-text key-value file per experiment,
with a section per pipeline stage (INI syntax).

Example::

    [experiment]
    seed = 7
    out_dir = runs/demo

    [data]
    generator = modulated-field
    d = 8
    n_total = 2400
    periods = 12, 60
    noise = 0.05
    train_fraction = 0.5

    [embedding]
    q = 24

    [kernel]
    kind = nlsa
    epsilon = 2.0
    alpha = 0
    sigma0 = median-sq

    [laplacian]
    l = 30

    [ose]
    l_trunc = auto
    eps_tol_factor = 1e-6
    max_levels = 12

    [forecast]
    methods = keaf-gh, keaf-lp, persistence
    leads = 0:24
    nN = all
    observable = eigenfunction:auto

    [evaluate]
    pc_threshold = 0.6
    figures = on

    [baselines]
    methods = ar-stationary, cluster-ar
    n_clusters = 2
    switch_budget = 40
    k_range = 1, 2, 3
    c_range = 20, 40

File-based data replaces the generator block with ``train = path[, path...]``
and ``test = ...`` plus ``format = csv | raw-binary``; ``q`` then takes one
window per listed variable.
"""

import configparser
from dataclasses import dataclass, field
import hashlib
from pathlib import Path


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: Path = Path("runs/out")
    # data
    generator: str | None = None
    generator_params: dict = field(default_factory=dict)
    train_fraction: float = 0.5
    train_paths: list[Path] = field(default_factory=list)
    test_paths: list[Path] = field(default_factory=list)
    data_format: str = "raw-binary"
    # embedding
    windows: list[int] = field(default_factory=lambda: [24])
    # kernel
    kernel_kind: str = "nlsa"
    epsilon: float = 2.0
    alpha: float = 0.0
    sigma0: str = "median-sq"
    # laplacian
    n_eigenfunctions: int = 30
    # ose
    l_trunc: int | None = None
    eps_tol_factor: float = 1e-6
    max_levels: int = 12
    # forecast
    methods: list[str] = field(default_factory=lambda: ["keaf-gh", "keaf-lp", "persistence"])
    leads: list[int] = field(default_factory=lambda: list(range(0, 61)))
    nn_list: list[int | None] = field(default_factory=lambda: [None])
    observable: str = "eigenfunction:auto"
    # evaluate
    pc_threshold: float = 0.6
    figures: bool = True
    # baselines
    baseline_methods: list[str] = field(default_factory=lambda: ["ar-stationary", "cluster-ar"])
    n_clusters: int = 2
    switch_budget: int = 40
    k_range: list[int] = field(default_factory=lambda: [1, 2, 3])
    c_range: list[int] = field(default_factory=lambda: [20, 40])


def _split(text: str) -> list[str]:
    return [part.strip() for part in text.split(",") if part.strip()]


def _parse_leads(text: str) -> list[int]:
    text = text.strip()
    if ":" in text:
        lo, hi = text.split(":")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in _split(text)]


def parse_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(str(path))
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = ExperimentConfig()

    if parser.has_section("experiment"):
        sec = parser["experiment"]
        cfg.seed = sec.getint("seed", cfg.seed)
        cfg.out_dir = Path(sec.get("out_dir", str(cfg.out_dir)))

    if parser.has_section("data"):
        sec = parser["data"]
        cfg.generator = sec.get("generator", None)
        cfg.data_format = sec.get("format", cfg.data_format)
        cfg.train_fraction = sec.getfloat("train_fraction", cfg.train_fraction)
        if cfg.generator:
            params: dict = {}
            if cfg.generator == "modulated-field":
                params["d"] = sec.getint("d", 8)
                params["n_samples"] = sec.getint("n_total", 2400)
                params["periods"] = tuple(float(p) for p in _split(sec.get("periods", "12, 60")))
                params["noise"] = sec.getfloat("noise", 0.05)
                params["intermittent"] = sec.getboolean("intermittent", True)
                params["phase_diffusion"] = sec.getfloat("phase_diffusion", 0.0)
            elif cfg.generator == "regime-ar":
                params["n_samples"] = sec.getint("n_total", 4000)
                params["mu"] = [float(v) for v in _split(sec.get("mu", "0.05, -0.05"))]
                params["coef"] = [float(v) for v in _split(sec.get("coef", "0.9, 0.9"))]
                params["sigma"] = [float(v) for v in _split(sec.get("sigma", "0.05, 0.05"))]
                params["persist"] = sec.getfloat("persist", 0.98)
            else:
                raise ValueError(f"unknown generator {cfg.generator!r}")
            cfg.generator_params = params
        else:
            cfg.train_paths = [Path(p) for p in _split(sec.get("train", ""))]
            cfg.test_paths = [Path(p) for p in _split(sec.get("test", ""))]
            if not cfg.train_paths or not cfg.test_paths:
                raise ValueError("data section needs either a generator or train/test paths")

    if parser.has_section("embedding"):
        cfg.windows = [int(v) for v in _split(parser["embedding"].get("q", "24"))]

    if parser.has_section("kernel"):
        sec = parser["kernel"]
        cfg.kernel_kind = sec.get("kind", cfg.kernel_kind)
        cfg.epsilon = sec.getfloat("epsilon", cfg.epsilon)
        cfg.alpha = sec.getfloat("alpha", cfg.alpha)
        cfg.sigma0 = sec.get("sigma0", cfg.sigma0)

    if parser.has_section("laplacian"):
        cfg.n_eigenfunctions = parser["laplacian"].getint("l", cfg.n_eigenfunctions)

    if parser.has_section("ose"):
        sec = parser["ose"]
        trunc = sec.get("l_trunc", "auto").strip()
        cfg.l_trunc = None if trunc == "auto" else int(trunc)
        cfg.eps_tol_factor = sec.getfloat("eps_tol_factor", cfg.eps_tol_factor)
        cfg.max_levels = sec.getint("max_levels", cfg.max_levels)

    if parser.has_section("forecast"):
        sec = parser["forecast"]
        cfg.methods = _split(sec.get("methods", ", ".join(cfg.methods)))
        cfg.leads = _parse_leads(sec.get("leads", "0:60"))
        nn_raw = _split(sec.get("nN", "all"))
        cfg.nn_list = [None if v == "all" else int(v) for v in nn_raw]
        cfg.observable = sec.get("observable", cfg.observable)

    if parser.has_section("evaluate"):
        sec = parser["evaluate"]
        cfg.pc_threshold = sec.getfloat("pc_threshold", cfg.pc_threshold)
        cfg.figures = sec.getboolean("figures", cfg.figures)

    if parser.has_section("baselines"):
        sec = parser["baselines"]
        cfg.baseline_methods = _split(sec.get("methods", ", ".join(cfg.baseline_methods)))
        cfg.n_clusters = sec.getint("n_clusters", cfg.n_clusters)
        cfg.switch_budget = sec.getint("switch_budget", cfg.switch_budget)
        cfg.k_range = [int(v) for v in _split(sec.get("k_range", "1, 2, 3"))]
        cfg.c_range = [int(v) for v in _split(sec.get("c_range", "20, 40"))]

    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if not 0 < cfg.train_fraction < 1:
        raise ValueError("train_fraction must lie strictly between 0 and 1")
    if any(q < 1 for q in cfg.windows):
        raise ValueError("embedding windows must be >= 1")
    if cfg.epsilon <= 0:
        raise ValueError("kernel epsilon must be positive")
    if cfg.n_eigenfunctions < 1:
        raise ValueError("need at least one eigenfunction")
    if any(lead < 0 for lead in cfg.leads):
        raise ValueError("leads must be nonnegative")
    if not 0 < cfg.pc_threshold < 1:
        raise ValueError("pc_threshold must lie in (0, 1)")
    obs = cfg.observable
    if not (obs == "integrated-anomaly" or obs.startswith("eigenfunction:")):
        raise ValueError(f"unknown observable spec {obs!r}")
    for path in [*cfg.train_paths, *cfg.test_paths]:
        if not path.exists():
            raise FileNotFoundError(f"data file not found: {path}")


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable hash of the resolved configuration (out_dir excluded, so moving
    the output directory does not invalidate artifacts)."""
    items = []
    for key in sorted(vars(cfg)):
        if key == "out_dir":
            continue
        items.append(f"{key}={vars(cfg)[key]!r}")
    return hashlib.sha256(";".join(items).encode()).hexdigest()[:16]
