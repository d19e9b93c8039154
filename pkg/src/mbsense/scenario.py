"""Scenario definitions: sub-band grid, arrays, path truth, and bistatic geometry.

A :class:`Scenario` is immutable after :func:`validate` and can be shared
freely across concurrent Monte-Carlo trials.  All quantities are stored in
base SI units (Hz, s, m, W/Hz, rad) and linear power ratios; any dB or
GHz/ns handling lives in the config/CLI layer.

Angle conventions
-----------------
Departure and arrival angles are measured from the respective array
broadside directions, positive counterclockwise.  Broadside unit vectors
are explicit scenario fields; by default the Tx and Rx arrays face each
other along the Tx->Rx axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

SPEED_OF_LIGHT = 299792458.0


class ScenarioError(ValueError):
    """Raised when a scenario violates an invariant; message names the field."""


class GeometricParams(NamedTuple):
    """Delay/angle triple describing one propagation path."""

    tau: float
    aod: float
    aoa: float


class BistaticParams(NamedTuple):
    """Output of the Cartesian -> bistatic mapping."""

    tau_d: float   # Tx -> point delay [s]
    tau_a: float   # point -> Rx delay [s]
    tau: float     # total delay tau_d + tau_a [s]
    aod: float     # departure angle from Tx broadside [rad]
    aoa: float     # arrival angle from Rx broadside [rad]


@dataclass(frozen=True)
class SubBand:
    """One sub-band of the multi-band grid.

    ``decay_rate`` is the diffuse-tail decay normalized to the measurement
    bandwidth.  ``vmd_kappa_tx``/``vmd_kappa_rx`` are von Mises
    concentrations for the diffuse angular profile; ``None`` means the
    angular covariance is the identity (angular spread not modeled).
    """

    carrier_freq: float
    subcarrier_spacing: float
    n_subcarriers: int
    decay_rate: float
    vmd_kappa_tx: float | None = None
    vmd_kappa_rx: float | None = None

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq

    @property
    def occupied_bandwidth(self) -> float:
        return self.n_subcarriers * self.subcarrier_spacing


@dataclass(frozen=True)
class ArrayConfig:
    """Uniform linear arrays at both ends of the bistatic link."""

    n_tx: int
    n_rx: int
    spacing_tx: float
    spacing_rx: float


@dataclass(frozen=True)
class PathTruth:
    """Ground-truth parameters of one specular path.

    ``coeffs`` holds one dimensionless complex coefficient per sub-band
    (frequency-dependent reflectivity/directivity, phase referenced to the
    band center and array phase centers).  The first path (index 0) is the
    direct path and carries no bistatic split; scatterer paths carry
    ``bistatic_delays = (tau_d, tau_a)`` with ``tau_d + tau_a == delay``.
    """

    delay: float
    aod: float
    aoa: float
    coeffs: tuple[complex, ...]
    bistatic_delays: tuple[float, float] | None = None


@dataclass(frozen=True)
class Scenario:
    """Full simulation scenario (Table-style configuration)."""

    sub_bands: tuple[SubBand, ...]
    arrays: ArrayConfig
    paths: tuple[PathTruth, ...]
    tx_psd: float          # transmit PSD [W/Hz]
    dmc_ratio: float       # diffuse power fraction alpha (linear, >= 0)
    noise_psd: float       # N0 [W/Hz]
    noise_figure: float    # linear (>= 1)
    tx_pos: tuple[float, float] | None = None
    rx_pos: tuple[float, float] | None = None
    tx_broadside: tuple[float, float] | None = None
    rx_broadside: tuple[float, float] | None = None
    name: str = "scenario"

    @property
    def n_bands(self) -> int:
        return len(self.sub_bands)

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    def band_dim(self, m: int) -> int:
        return self.sub_bands[m].n_subcarriers * self.arrays.n_tx * self.arrays.n_rx

    def noise_var(self, m: int) -> float:
        """Per-subcarrier noise variance NF * N0 * f_delta for band ``m``."""
        return self.noise_figure * self.noise_psd * self.sub_bands[m].subcarrier_spacing

    def with_tx_psd(self, tx_psd: float) -> "Scenario":
        return replace(self, tx_psd=tx_psd)

    def with_dmc_ratio(self, dmc_ratio: float) -> "Scenario":
        return replace(self, dmc_ratio=dmc_ratio)


@dataclass(frozen=True)
class AlgorithmConfig:
    """Estimator/fusion knobs (defaults follow the reference configuration)."""

    detection_radius: float = 0.5       # truth-association radius in normalized units
    esnr_gate_db: float = 6.0           # sub-band gate for fusion combining
    prominence_threshold: float = 0.2   # alias-resolution prominence
    max_match_cost: float = 0.75        # Hungarian gating cost
    detection_floor_db: float = 13.0    # single-band path reliability floor
    max_paths: int = 8                  # hard cap on detected paths per band
    grid_delay_oversampling: int = 4
    grid_angle_oversampling: int = 4


def _wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


def _unit(v: Sequence[float], what: str) -> tuple[float, float]:
    n = math.hypot(v[0], v[1])
    if n < 1e-12:
        raise ScenarioError(f"{what}: zero-length broadside vector")
    return (v[0] / n, v[1] / n)


def validate(scenario: Scenario) -> Scenario:
    """Check every invariant and return the normalized scenario.

    Angles are wrapped to (-pi, pi] before the half-plane bound is
    enforced, so validation is idempotent.  The first violated invariant
    raises :class:`ScenarioError` with the offending field path.
    """
    if scenario.n_paths < 1:
        raise ScenarioError("paths: at least one path required")
    if scenario.n_bands < 1:
        raise ScenarioError("sub_bands: at least one sub-band required")

    n_ref = scenario.sub_bands[0].n_subcarriers
    for m, b in enumerate(scenario.sub_bands):
        tag = f"sub_bands[{m}]"
        if b.carrier_freq <= 0:
            raise ScenarioError(f"{tag}.carrier_freq must be > 0")
        if b.subcarrier_spacing <= 0:
            raise ScenarioError(f"{tag}.subcarrier_spacing must be > 0")
        if b.n_subcarriers < 2:
            raise ScenarioError(f"{tag}.n_subcarriers must be >= 2")
        if b.decay_rate <= 0:
            raise ScenarioError(f"{tag}.decay_rate must be > 0")
        if b.n_subcarriers != n_ref:
            raise ScenarioError(f"{tag}.n_subcarriers: all sub-bands share one N")
        for attr in ("vmd_kappa_tx", "vmd_kappa_rx"):
            v = getattr(b, attr)
            if v is not None and v < 0:
                raise ScenarioError(f"{tag}.{attr} must be >= 0 when present")

    a = scenario.arrays
    if a.n_tx < 1 or a.n_rx < 1:
        raise ScenarioError("arrays: element counts must be >= 1")
    if a.spacing_tx <= 0 or a.spacing_rx <= 0:
        raise ScenarioError("arrays: element spacings must be > 0")

    if scenario.tx_psd <= 0:
        raise ScenarioError("tx_psd must be > 0")
    if scenario.dmc_ratio < 0:
        raise ScenarioError("dmc_ratio must be >= 0")
    if scenario.noise_psd <= 0:
        raise ScenarioError("noise_psd must be > 0")
    if scenario.noise_figure < 1.0:
        raise ScenarioError("noise_figure must be >= 1 (linear)")

    new_paths = []
    tau_los = scenario.paths[0].delay
    for k, p in enumerate(scenario.paths):
        tag = f"paths[{k}]"
        aod = _wrap_angle(p.aod)
        aoa = _wrap_angle(p.aoa)
        if abs(aod) >= math.pi / 2:
            raise ScenarioError(f"{tag}.aod out of range (-pi/2, pi/2)")
        if abs(aoa) >= math.pi / 2:
            raise ScenarioError(f"{tag}.aoa out of range (-pi/2, pi/2)")
        if p.delay <= 0:
            raise ScenarioError(f"{tag}.delay must be > 0")
        if k > 0 and p.delay < tau_los:
            raise ScenarioError(f"{tag}.delay must be >= direct-path delay")
        if len(p.coeffs) != scenario.n_bands:
            raise ScenarioError(f"{tag}.coeffs needs one entry per sub-band")
        if k > 0:
            if p.bistatic_delays is None:
                raise ScenarioError(f"{tag}.bistatic_delays required for scatterers")
            td, ta = p.bistatic_delays
            if td <= 0 or ta <= 0:
                raise ScenarioError(f"{tag}.bistatic_delays must be > 0")
            if abs((td + ta) - p.delay) > 1e-12 + 1e-9 * p.delay:
                raise ScenarioError(f"{tag}.bistatic_delays must sum to the total delay")
        new_paths.append(replace(p, aod=aod, aoa=aoa))

    tx_b = scenario.tx_broadside
    rx_b = scenario.rx_broadside
    if scenario.tx_pos is not None and scenario.rx_pos is not None:
        tx = np.asarray(scenario.tx_pos, float)
        rx = np.asarray(scenario.rx_pos, float)
        if np.hypot(*(rx - tx)) < 1e-9:
            raise ScenarioError("rx_pos coincides with tx_pos")
        if tx_b is None:
            tx_b = _unit(rx - tx, "tx_broadside")
        if rx_b is None:
            rx_b = _unit(tx - rx, "rx_broadside")
    if tx_b is not None:
        tx_b = _unit(tx_b, "tx_broadside")
    if rx_b is not None:
        rx_b = _unit(rx_b, "rx_broadside")

    return replace(scenario, paths=tuple(new_paths), tx_broadside=tx_b, rx_broadside=rx_b)


def _signed_angle(from_vec: np.ndarray, to_vec: np.ndarray) -> float:
    cross = from_vec[0] * to_vec[1] - from_vec[1] * to_vec[0]
    dot = from_vec[0] * to_vec[0] + from_vec[1] * to_vec[1]
    return math.atan2(cross, dot)


def cartesian_to_bistatic(
    p: Sequence[float],
    tx_pos: Sequence[float],
    rx_pos: Sequence[float],
    tx_broadside: Sequence[float] | None = None,
    rx_broadside: Sequence[float] | None = None,
) -> BistaticParams:
    """Map a 2-D point to bistatic delays and broadside-relative angles.

    Default broadsides make the arrays face each other along the Tx->Rx
    axis.  The mapping is invariant under global rotation/translation when
    the broadside vectors co-rotate with the geometry.
    """
    p = np.asarray(p, float)
    tx = np.asarray(tx_pos, float)
    rx = np.asarray(rx_pos, float)

    d_tx = p - tx
    d_rx = p - rx
    r_tx = math.hypot(*d_tx)
    r_rx = math.hypot(*d_rx)
    if r_tx < 1e-9:
        raise ScenarioError("point coincides with tx_pos")
    if r_rx < 1e-9:
        raise ScenarioError("point coincides with rx_pos")
    if math.hypot(*(rx - tx)) < 1e-9:
        raise ScenarioError("rx_pos coincides with tx_pos")

    b_tx = np.asarray(_unit(rx - tx, "tx_broadside") if tx_broadside is None
                      else _unit(tx_broadside, "tx_broadside"), float)
    b_rx = np.asarray(_unit(tx - rx, "rx_broadside") if rx_broadside is None
                      else _unit(rx_broadside, "rx_broadside"), float)

    tau_d = r_tx / SPEED_OF_LIGHT
    tau_a = r_rx / SPEED_OF_LIGHT
    aod = _signed_angle(b_tx, d_tx / r_tx)
    aoa = _signed_angle(b_rx, d_rx / r_rx)
    return BistaticParams(tau_d, tau_a, tau_d + tau_a, aod, aoa)


def scatterer_bistatic_split(tau_total: float, aod: float, tau_los: float) -> tuple[float, float]:
    """Recover (tau_d, tau_a) from total delay and departure angle.

    The scatterer lies on the ray leaving Tx at ``aod`` and on the ellipse
    of constant total delay with foci at Tx and Rx (baseline ``c*tau_los``),
    which intersect at a unique point in the forward half-plane.
    """
    if tau_total <= tau_los:
        raise ScenarioError("total delay must exceed the direct-path delay")
    c = SPEED_OF_LIGHT
    d_base = c * tau_los
    d_tot = c * tau_total
    r_tx = (d_tot**2 - d_base**2) / (2.0 * (d_tot - d_base * math.cos(aod)))
    tau_d = r_tx / c
    return tau_d, tau_total - tau_d


def reference_scenario(
    tx_psd: float = 1e-7,
    dmc_ratio: float = 1e-3,
    name: str = "two-band-reference",
) -> Scenario:
    """Two-band desk-scale scenario used throughout the tests and demos.

    8.75 / 21.7 GHz sub-bands, 128 subcarriers of 1 MHz, 2x2-element
    arrays at 2 cm spacing, a direct path plus one scatterer.  Defaults:
    tx_psd = -40 dBm/Hz, dmc_ratio = -30 dB.
    """
    bands = (
        SubBand(8.75e9, 1e6, 128, 0.5),
        SubBand(21.7e9, 1e6, 128, 1.5),
    )
    arrays = ArrayConfig(2, 2, 0.02, 0.02)
    tau_los = 30e-9
    tau_sc = 32.55e-9
    aod_sc = math.radians(16.72)
    aoa_sc = math.radians(30.96)
    tau_d, tau_a = scatterer_bistatic_split(tau_sc, aod_sc, tau_los)
    paths = (
        PathTruth(tau_los, 0.0, 0.0, (0.0071 + 0.0j, 0.0029 + 0.0j)),
        PathTruth(tau_sc, aod_sc, aoa_sc,
                  (0.0013 - 0.0095j, 0.0005 - 0.0038j),
                  bistatic_delays=(tau_d, tau_a)),
    )
    baseline = SPEED_OF_LIGHT * tau_los
    return validate(Scenario(
        sub_bands=bands,
        arrays=arrays,
        paths=paths,
        tx_psd=tx_psd,
        dmc_ratio=dmc_ratio,
        noise_psd=10.0 ** ((-174.0 - 30.0) / 10.0),
        noise_figure=10.0 ** 0.7,
        tx_pos=(0.0, 0.0),
        rx_pos=(baseline, 0.0),
        name=name,
    ))
