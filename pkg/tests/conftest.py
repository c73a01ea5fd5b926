import pathlib
import sys

import numpy as np
import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

import oracles  # noqa: E402

from analogcast import KernelSpec, build_matrix, decompose, embed, synth_modulated_field
from analogcast import with_phase_velocities

OUTPUT_DIR = pathlib.Path(__file__).parent / "_output"


@pytest.fixture(scope="session", autouse=True)
def oracle_report():
    yield
    OUTPUT_DIR.mkdir(exist_ok=True)
    oracles.dump_report(OUTPUT_DIR / "oracle_report.csv")


@pytest.fixture(scope="session")
def torus_embedded():
    """Embedded synthetic field with annual and slow cycles, velocities on."""
    data, meta = synth_modulated_field(8, 700, periods=(12, 60), seed=1, noise=0.02)
    emb = with_phase_velocities(embed(data, 24))
    return emb, meta


@pytest.fixture(scope="session")
def torus_split(torus_embedded):
    """Interleaved train/test split of the embedded torus (dense manifold)."""
    emb, meta = torus_embedded
    train = emb.take(np.arange(0, emb.n_samples, 2))
    test = emb.take(np.arange(1, emb.n_samples, 2))
    return train, test, meta


@pytest.fixture(scope="session")
def torus_basis(torus_split):
    train, test, meta = torus_split
    spec = KernelSpec("nlsa", epsilon=2.0)
    basis = decompose(build_matrix(train, spec), 0.0, 25)
    return train, test, spec, basis
