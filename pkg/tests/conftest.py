import numpy as np
import pytest

from mbsense.scenario import (
    AlgorithmConfig,
    ArrayConfig,
    PathTruth,
    Scenario,
    SubBand,
    reference_scenario,
    validate,
)


def dbm_per_hz(v: float) -> float:
    return 10.0 ** ((v - 30.0) / 10.0)


@pytest.fixture(scope="session")
def ref_scenario() -> Scenario:
    return reference_scenario()


@pytest.fixture(scope="session")
def algo() -> AlgorithmConfig:
    return AlgorithmConfig()


def small_scenario(n_subcarriers=16, n_tx=2, n_rx=2, dmc_ratio=0.1,
                   kappa=None, n_paths=2) -> Scenario:
    """Reduced-dimension scenario for dense-matrix oracle tests."""
    bands = (
        SubBand(8.75e9, 1e6, n_subcarriers, 0.5, kappa, kappa),
        SubBand(21.7e9, 1e6, n_subcarriers, 1.5, kappa, kappa),
    )
    paths = [PathTruth(30e-9, 0.0, 0.0, (0.0071 + 0j, 0.0029 + 0j))]
    if n_paths > 1:
        paths.append(PathTruth(
            32.55e-9, np.deg2rad(16.72), np.deg2rad(30.96),
            (0.0013 - 0.0095j, 0.0005 - 0.0038j),
            bistatic_delays=(20.886e-9, 32.55e-9 - 20.886e-9)))
    return validate(Scenario(
        sub_bands=bands,
        arrays=ArrayConfig(n_tx, n_rx, 0.02, 0.02),
        paths=tuple(paths),
        tx_psd=dbm_per_hz(-40.0),
        dmc_ratio=dmc_ratio,
        noise_psd=dbm_per_hz(-174.0),
        noise_figure=10.0 ** 0.7,
        name="small",
    ))
