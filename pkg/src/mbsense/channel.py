"""Channel synthesis: steering vectors, path gains, diffuse covariance, sampling.

The per-band transfer function lives on the Kronecker grid
(subcarrier x Tx element x Rx element), stacked sub-band-major with
C-order flattening of the (N, L_T, L_R) tensor; this matches the
F (x) T (x) R factorization of the steering vectors and is the wire
contract for every vector in this package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .scenario import SPEED_OF_LIGHT, ArrayConfig, GeometricParams, Scenario, SubBand

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# steering vectors and their parameter derivatives
# ---------------------------------------------------------------------------

def steering_freq(band: SubBand, tau: float) -> np.ndarray:
    """Frequency steering: entry n is exp(-j n w_delta tau), n = 0..N-1."""
    n = np.arange(band.n_subcarriers)
    return np.exp(-1j * TWO_PI * band.subcarrier_spacing * n * tau)


def steering_tx(band: SubBand, arrays: ArrayConfig, aod: float) -> np.ndarray:
    """Departure steering across the Tx ULA."""
    l = np.arange(arrays.n_tx)
    return np.exp(-1j * TWO_PI * band.carrier_freq * (arrays.spacing_tx / SPEED_OF_LIGHT)
                  * l * math.sin(aod))


def steering_rx(band: SubBand, arrays: ArrayConfig, aoa: float) -> np.ndarray:
    """Arrival steering across the Rx ULA."""
    l = np.arange(arrays.n_rx)
    return np.exp(-1j * TWO_PI * band.carrier_freq * (arrays.spacing_rx / SPEED_OF_LIGHT)
                  * l * math.sin(aoa))


def dsteering_freq(band: SubBand, tau: float) -> np.ndarray:
    n = np.arange(band.n_subcarriers)
    return steering_freq(band, tau) * (-1j * TWO_PI * band.subcarrier_spacing * n)


def dsteering_tx(band: SubBand, arrays: ArrayConfig, aod: float) -> np.ndarray:
    l = np.arange(arrays.n_tx)
    scale = TWO_PI * band.carrier_freq * arrays.spacing_tx / SPEED_OF_LIGHT
    return steering_tx(band, arrays, aod) * (-1j * scale * l * math.cos(aod))


def dsteering_rx(band: SubBand, arrays: ArrayConfig, aoa: float) -> np.ndarray:
    l = np.arange(arrays.n_rx)
    scale = TWO_PI * band.carrier_freq * arrays.spacing_rx / SPEED_OF_LIGHT
    return steering_rx(band, arrays, aoa) * (-1j * scale * l * math.cos(aoa))


def total_steering(band: SubBand, arrays: ArrayConfig, x: GeometricParams) -> np.ndarray:
    """Kronecker total steering a = a_F (x) a_T (x) a_R."""
    return np.kron(steering_freq(band, x.tau),
                   np.kron(steering_tx(band, arrays, x.aod),
                           steering_rx(band, arrays, x.aoa)))


# ---------------------------------------------------------------------------
# path gains
# ---------------------------------------------------------------------------

def gain_reference_phase(band: SubBand, arrays: ArrayConfig, x: GeometricParams) -> complex:
    """Unit-modulus factor moving a band/array-center-referenced coefficient
    to the first-subcarrier/first-element phase reference used by the
    steering vectors.

    Path coefficients are specified with their phase referenced to the
    center of the occupied band and to the array phase centers; the
    steering vectors reference subcarrier 0 and element 0.  Multiplying a
    centered coefficient by this factor yields the gain consistent with
    ``total_steering``.
    """
    ph = (band.subcarrier_spacing * (band.n_subcarriers - 1) / 2.0 * x.tau
          + band.carrier_freq * (arrays.spacing_tx / SPEED_OF_LIGHT)
          * (arrays.n_tx - 1) / 2.0 * math.sin(x.aod)
          + band.carrier_freq * (arrays.spacing_rx / SPEED_OF_LIGHT)
          * (arrays.n_rx - 1) / 2.0 * math.sin(x.aoa))
    return complex(np.exp(1j * TWO_PI * ph))


def path_gain(scenario: Scenario, k: int, m: int) -> complex:
    """Complex gain of path ``k`` on band ``m``.

    The direct path follows the one-way free-space law on its total
    delay; scatterer paths follow the two-way bistatic law on the product
    of their leg distances.  The scenario coefficient supplies the
    frequency-dependent reflectivity/directivity and phase.
    """
    band = scenario.sub_bands[m]
    p = scenario.paths[k]
    c = SPEED_OF_LIGHT
    p_sc = scenario.tx_psd * band.subcarrier_spacing
    if k == 0:
        if p.delay <= 0:
            raise ValueError("zero direct-path delay: singular geometry")
        amp = math.sqrt(p_sc / (4.0 * math.pi * (c * p.delay) ** 2))
    else:
        tau_d, tau_a = p.bistatic_delays
        if tau_d <= 0 or tau_a <= 0:
            raise ValueError("zero bistatic leg delay: singular geometry")
        amp = math.sqrt(p_sc / ((4.0 * math.pi) ** 2 * (c * tau_d) ** 2 * (c * tau_a) ** 2))
    ref = gain_reference_phase(band, scenario.arrays, GeometricParams(p.delay, p.aod, p.aoa))
    return p.coeffs[m] * amp * ref


def path_gains(scenario: Scenario) -> np.ndarray:
    """All gains as a (K, M) complex array."""
    K, M = scenario.n_paths, scenario.n_bands
    return np.array([[path_gain(scenario, k, m) for m in range(M)] for k in range(K)])


# ---------------------------------------------------------------------------
# specular synthesis
# ---------------------------------------------------------------------------

def synth_band(scenario: Scenario, m: int) -> np.ndarray:
    """Specular transfer function of band ``m`` (length N*L_T*L_R)."""
    band = scenario.sub_bands[m]
    s = np.zeros(scenario.band_dim(m), dtype=complex)
    for k, p in enumerate(scenario.paths):
        x = GeometricParams(p.delay, p.aod, p.aoa)
        s += path_gain(scenario, k, m) * total_steering(band, scenario.arrays, x)
    return s


def synth_sc(scenario: Scenario) -> np.ndarray:
    """Specular component stacked over sub-bands."""
    return np.concatenate([synth_band(scenario, m) for m in range(scenario.n_bands)])


# ---------------------------------------------------------------------------
# diffuse (dense multipath) covariance
# ---------------------------------------------------------------------------

def dmc_fcf(band: SubBand, alpha: float, los_power: float, tau_los: float) -> np.ndarray:
    """Frequency correlation of the diffuse tail (first Toeplitz column).

    ``los_power`` is the total specular power of the direct path on this
    band (gain magnitude squared times N*L_T*L_R); the diffuse tail peaks
    at the fraction ``alpha`` of it and decays at the normalized rate
    ``band.decay_rate``.
    """
    if band.decay_rate <= 0:
        raise ValueError("decay_rate must be > 0")
    N = band.n_subcarriers
    n = np.arange(N)
    mod = np.exp(-1j * TWO_PI * band.subcarrier_spacing * n * tau_los)
    return (alpha * los_power / N) * mod / (band.decay_rate + 1j * TWO_PI * n / N)


def vmd_angular_fcf(
    band: SubBand,
    n_elements: int,
    spacing: float,
    kappa: float,
    ref_angle: float,
    tol: float = 1e-10,
) -> np.ndarray:
    """Spatial correlation of a von Mises angular profile (length L).

    Trapezoidal quadrature over the full circle with node doubling until
    the result is stable to ``tol`` (the integrand is smooth and periodic,
    so the rule converges spectrally).
    """
    from scipy.special import i0

    scale = TWO_PI * band.carrier_freq * spacing / SPEED_OF_LIGHT
    l = np.arange(n_elements)

    def quad(n_nodes: int) -> np.ndarray:
        phi = -math.pi + TWO_PI * np.arange(n_nodes) / n_nodes
        pap = np.exp(kappa * np.cos(phi - ref_angle)) / (TWO_PI * i0(kappa))
        kern = np.exp(-1j * scale * np.outer(l, np.sin(phi)))
        return kern @ pap * (TWO_PI / n_nodes)

    nodes = 4096
    prev = quad(nodes)
    while nodes < 1 << 18:
        nodes *= 2
        cur = quad(nodes)
        if np.max(np.abs(cur - prev)) < tol:
            return cur
        prev = cur
    return prev


def dmc_angular_cov(
    band: SubBand,
    arrays: ArrayConfig,
    side: str,
    ref_angle: float,
) -> np.ndarray:
    """Angular covariance factor for one side ('tx' or 'rx').

    Without a von Mises concentration the angular spread is unmodeled and
    the factor is the identity.
    """
    if side == "tx":
        kappa, n_el, spacing = band.vmd_kappa_tx, arrays.n_tx, arrays.spacing_tx
    elif side == "rx":
        kappa, n_el, spacing = band.vmd_kappa_rx, arrays.n_rx, arrays.spacing_rx
    else:
        raise ValueError("side must be 'tx' or 'rx'")
    if kappa is None:
        return np.eye(n_el, dtype=complex)
    r = vmd_angular_fcf(band, n_el, spacing, kappa, ref_angle)
    return toeplitz(r, r.conj())


# ---------------------------------------------------------------------------
# Kronecker-factored covariance of one sub-band
# ---------------------------------------------------------------------------

def _mode_apply(v: np.ndarray, A_f: np.ndarray, A_t: np.ndarray, A_r: np.ndarray,
                shape: tuple[int, int, int]) -> np.ndarray:
    """(A_f (x) A_t (x) A_r) @ v via mode products on the reshaped tensor."""
    t = v.reshape(shape)
    t = np.tensordot(A_f, t, axes=(1, 0))
    t = np.tensordot(A_t, t, axes=(1, 1)).transpose(1, 0, 2)
    t = np.tensordot(A_r, t, axes=(1, 2)).transpose(1, 2, 0)
    return t.reshape(-1)


@dataclass
class KroneckerCov:
    """Joint eigen-factorization of M = R_F (x) R_T (x) R_R + sigma^2 I.

    Because the white-noise term shares every eigenbasis, the inverse and
    both matrix square roots are diagonal in the Kronecker eigenbasis and
    never require dense storage of the full matrix.
    """

    u_f: np.ndarray
    u_t: np.ndarray
    u_r: np.ndarray
    lam_f: np.ndarray
    lam_t: np.ndarray
    lam_r: np.ndarray
    sigma2: float

    def __post_init__(self) -> None:
        self.shape3 = (len(self.lam_f), len(self.lam_t), len(self.lam_r))
        lam = (self.lam_f[:, None, None]
               * self.lam_t[None, :, None]
               * self.lam_r[None, None, :])
        self.cov_eigs = lam                      # eigenvalues of R alone
        self.m_eigs = lam + self.sigma2          # eigenvalues of M = R + S

    @property
    def dim(self) -> int:
        return int(np.prod(self.shape3))

    def to_eigenbasis(self, v: np.ndarray) -> np.ndarray:
        return _mode_apply(v, self.u_f.conj().T, self.u_t.conj().T, self.u_r.conj().T,
                           self.shape3)

    def from_eigenbasis(self, v: np.ndarray) -> np.ndarray:
        return _mode_apply(v, self.u_f, self.u_t, self.u_r, self.shape3)

    def apply_minv(self, v: np.ndarray) -> np.ndarray:
        """M^{-1} v.  Accepts a vector or a (dim, n) column stack."""
        if v.ndim == 2:
            return np.stack([self.apply_minv(v[:, j]) for j in range(v.shape[1])], axis=1)
        w = self.to_eigenbasis(v).reshape(self.shape3) / self.m_eigs
        return self.from_eigenbasis(w.reshape(-1))

    def whiten(self, v: np.ndarray) -> np.ndarray:
        """M^{-1/2} v mapped into the eigenbasis (coordinates where M = I).

        The extra unitary rotation relative to the symmetric square root
        is irrelevant for every norm/inner-product use in this package.
        """
        if v.ndim == 2:
            return np.stack([self.whiten(v[:, j]) for j in range(v.shape[1])], axis=1)
        w = self.to_eigenbasis(v).reshape(self.shape3) / np.sqrt(self.m_eigs)
        return w.reshape(-1)

    def apply_cov_sqrt(self, v: np.ndarray) -> np.ndarray:
        """Symmetric square root R^{1/2} v of the diffuse covariance alone."""
        w = self.to_eigenbasis(v).reshape(self.shape3) * np.sqrt(self.cov_eigs)
        return self.from_eigenbasis(w.reshape(-1))

    def dense_m(self) -> np.ndarray:
        """Dense M for small-dimension oracle tests."""
        r_f = (self.u_f * self.lam_f) @ self.u_f.conj().T
        r_t = (self.u_t * self.lam_t) @ self.u_t.conj().T
        r_r = (self.u_r * self.lam_r) @ self.u_r.conj().T
        r = np.kron(r_f, np.kron(r_t, r_r))
        return r + self.sigma2 * np.eye(self.dim)


@dataclass
class CovarianceSet:
    """Per-band factored covariances for one scenario."""

    bands: list[KroneckerCov]

    def __getitem__(self, m: int) -> KroneckerCov:
        return self.bands[m]

    def __len__(self) -> int:
        return len(self.bands)


def _eigh_psd(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lam, u = np.linalg.eigh(a)
    return np.clip(lam, 0.0, None), u


def assemble_covariances(scenario: Scenario) -> CovarianceSet:
    """Build and eigendecompose every per-band covariance factor once."""
    out = []
    tau_los = scenario.paths[0].delay
    aod_los = scenario.paths[0].aod
    aoa_los = scenario.paths[0].aoa
    n_ant = scenario.arrays.n_tx * scenario.arrays.n_rx
    for m, band in enumerate(scenario.sub_bands):
        sigma2 = scenario.noise_var(m)
        if scenario.dmc_ratio > 0:
            g1 = path_gain(scenario, 0, m)
            los_power = abs(g1) ** 2 * band.n_subcarriers * n_ant
            r_f = toeplitz(dmc_fcf(band, scenario.dmc_ratio, los_power, tau_los))
            lam_f, u_f = _eigh_psd(r_f)
            r_t = dmc_angular_cov(band, scenario.arrays, "tx", aod_los)
            r_r = dmc_angular_cov(band, scenario.arrays, "rx", aoa_los)
            lam_t, u_t = _eigh_psd(r_t)
            lam_r, u_r = _eigh_psd(r_r)
        else:
            lam_f = np.zeros(band.n_subcarriers)
            u_f = np.eye(band.n_subcarriers, dtype=complex)
            lam_t = np.ones(scenario.arrays.n_tx)
            u_t = np.eye(scenario.arrays.n_tx, dtype=complex)
            lam_r = np.ones(scenario.arrays.n_rx)
            u_r = np.eye(scenario.arrays.n_rx, dtype=complex)
        out.append(KroneckerCov(u_f, u_t, u_r, lam_f, lam_t, lam_r, sigma2))
    return CovarianceSet(out)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

@dataclass
class ChannelRealization:
    """One noisy multi-band channel draw (sub-band-major stacking)."""

    h: np.ndarray
    seed: int

    def band(self, scenario: Scenario, m: int) -> np.ndarray:
        sizes = [scenario.band_dim(i) for i in range(scenario.n_bands)]
        start = sum(sizes[:m])
        return self.h[start:start + sizes[m]]


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Deterministic per-trial stream: Generator(PCG64(SeedSequence((master, trial)))).

    Trials are independent for distinct indices and reproducible across
    runs and scheduling orders.
    """
    return np.random.default_rng(np.random.SeedSequence((master_seed, trial)))


def _ccn(rng: np.random.Generator, n: int) -> np.ndarray:
    """Standard circular complex normal."""
    return (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2.0)


def sample_realization(
    scenario: Scenario,
    cov: CovarianceSet,
    seed: int,
    trial: int = 0,
) -> ChannelRealization:
    """Draw h = s + R^{1/2} z1 + sigma z2 with a per-(seed, trial) stream."""
    rng = trial_rng(seed, trial)
    parts = []
    for m in range(scenario.n_bands):
        km = cov[m]
        s = synth_band(scenario, m)
        d = km.apply_cov_sqrt(_ccn(rng, km.dim)) if scenario.dmc_ratio > 0 else 0.0
        w = math.sqrt(km.sigma2) * _ccn(rng, km.dim)
        parts.append(s + d + w)
    return ChannelRealization(np.concatenate(parts), seed)


def band_pdp(h_band: np.ndarray, n_subcarriers: int, n_tx: int, n_rx: int) -> np.ndarray:
    """Delay-domain power profile: unitary IDFT over subcarriers, averaged
    over antenna pairs.  Bin q sits at delay q / (N f_delta)."""
    t = h_band.reshape(n_subcarriers, n_tx * n_rx)
    taps = np.fft.ifft(t, axis=0) * math.sqrt(n_subcarriers)
    return np.mean(np.abs(taps) ** 2, axis=1)
