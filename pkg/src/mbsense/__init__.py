"""Multi-band bistatic sensing with a dense diffuse-multipath background.

The package simulates a frequency-domain MIMO channel whose specular
paths ride on a structured diffuse tail plus white noise, computes the
fundamental estimation limits of that model (Fisher information, exact
and per-band CRBs, estimation SNR, geometric gain maps), and runs a
multi-band estimator that fuses per-band maximum-likelihood estimates
while resolving grating-lobe angle ambiguities.

Modules
-------
scenario    configuration types, validation, bistatic geometry
channel     steering vectors, path gains, covariances, channel sampling
limits      Fisher information, CRBs, ESNR, geometric gain maps
estimator   single-band ML estimation (matched filter + damped Gauss-Newton)
fusion      alias enumeration, Hungarian association, weighted combining
evaluate    Monte-Carlo harness (RMSE, detection curves, delay profiles)
config      YAML scenario files with explicit units
cli         command-line experiments writing figure-ready CSVs
"""

__version__ = "0.1.0"

from .scenario import (  # noqa: F401
    AlgorithmConfig,
    ArrayConfig,
    BistaticParams,
    GeometricParams,
    PathTruth,
    Scenario,
    ScenarioError,
    SubBand,
    cartesian_to_bistatic,
    reference_scenario,
    validate,
)
