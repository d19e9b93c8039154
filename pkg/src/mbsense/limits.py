"""Fundamental sensing limits: Fisher information, CRBs, ESNR, geometric gain maps.

Parameter ordering of the full multi-band information matrix:

    [tau_1..tau_K, aod_1..aod_K, aoa_1..aoa_K,
     Re g_{1,1}..Re g_{1,M}, .., Re g_{K,M},
     Im g_{1,1}..Im g_{K,M}]

i.e. geometry first, then gain blocks path-major over bands; total
3K + 2KM real parameters.  Single-band information matrices use the same
layout restricted to that band's gains (3K + 2K parameters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import channel
from .scenario import SPEED_OF_LIGHT, GeometricParams, Scenario, cartesian_to_bistatic
from .channel import CovarianceSet

TWO_PI = 2.0 * math.pi

COND_LIMIT = 1e12


class ParamIndex:
    """Index arithmetic for the flattened real parameter vector."""

    def __init__(self, n_paths: int, n_bands: int):
        self.K = n_paths
        self.M = n_bands

    @property
    def n_params(self) -> int:
        return 3 * self.K + 2 * self.K * self.M

    def tau(self, k: int) -> int:
        return k

    def aod(self, k: int) -> int:
        return self.K + k

    def aoa(self, k: int) -> int:
        return 2 * self.K + k

    def re_g(self, k: int, m: int) -> int:
        return 3 * self.K + k * self.M + m

    def im_g(self, k: int, m: int) -> int:
        return 3 * self.K + self.K * self.M + k * self.M + m


def _path_columns(scenario: Scenario, m: int, k: int) -> dict[str, np.ndarray]:
    """Steering vector of path k on band m plus its three derivative columns."""
    band = scenario.sub_bands[m]
    arr = scenario.arrays
    p = scenario.paths[k]
    a_f = channel.steering_freq(band, p.delay)
    a_t = channel.steering_tx(band, arr, p.aod)
    a_r = channel.steering_rx(band, arr, p.aoa)
    d_f = channel.dsteering_freq(band, p.delay)
    d_t = channel.dsteering_tx(band, arr, p.aod)
    d_r = channel.dsteering_rx(band, arr, p.aoa)
    a = np.kron(a_f, np.kron(a_t, a_r))
    return {
        "a": a,
        "dtau": np.kron(d_f, np.kron(a_t, a_r)),
        "daod": np.kron(a_f, np.kron(d_t, a_r)),
        "daoa": np.kron(a_f, np.kron(a_t, d_r)),
    }


def jacobian(scenario: Scenario, m: int) -> np.ndarray:
    """Jacobian D_m of the band-m mean w.r.t. the full parameter vector.

    Gain columns of other bands are zero (band m carries no information
    about them); geometry columns scale with the band-m gains.
    """
    K, M = scenario.n_paths, scenario.n_bands
    idx = ParamIndex(K, M)
    dim = scenario.band_dim(m)
    D = np.zeros((dim, idx.n_params), dtype=complex)
    for k in range(K):
        cols = _path_columns(scenario, m, k)
        g = channel.path_gain(scenario, k, m)
        D[:, idx.tau(k)] = g * cols["dtau"]
        D[:, idx.aod(k)] = g * cols["daod"]
        D[:, idx.aoa(k)] = g * cols["daoa"]
        D[:, idx.re_g(k, m)] = cols["a"]
        D[:, idx.im_g(k, m)] = 1j * cols["a"]
    return D


def jacobian_band(scenario: Scenario, m: int) -> np.ndarray:
    """Single-band Jacobian: columns [tau_k, aod_k, aoa_k, Re g_k, Im g_k]."""
    K = scenario.n_paths
    dim = scenario.band_dim(m)
    D = np.zeros((dim, 5 * K), dtype=complex)
    for k in range(K):
        cols = _path_columns(scenario, m, k)
        g = channel.path_gain(scenario, k, m)
        D[:, k] = g * cols["dtau"]
        D[:, K + k] = g * cols["daod"]
        D[:, 2 * K + k] = g * cols["daoa"]
        D[:, 3 * K + k] = cols["a"]
        D[:, 4 * K + k] = 1j * cols["a"]
    return D


def fim_from_jacobian(D: np.ndarray, cov_m) -> np.ndarray:
    """F = 2 Re(D^H M^{-1} D) using the factored covariance solve."""
    X = cov_m.apply_minv(D)
    return 2.0 * np.real(D.conj().T @ X)


def _scaled_inverse(F: np.ndarray) -> tuple[np.ndarray, bool]:
    """Invert a Fisher matrix with unit-equilibrated conditioning.

    Returns (covariance, used_pseudo_inverse).  Diagonal scaling removes
    the enormous dynamic range between delay (seconds) and gain rows; the
    pseudo-inverse path triggers on near-coherent path geometry.
    """
    d = np.diag(F).copy()
    d[d <= 0] = 1.0
    s = 1.0 / np.sqrt(d)
    Ft = F * s[:, None] * s[None, :]
    cond = np.linalg.cond(Ft)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        Fi = np.linalg.pinv(Ft, rcond=1e-14)
        return Fi * s[:, None] * s[None, :], True
    Fi = np.linalg.inv(Ft)
    return Fi * s[:, None] * s[None, :], False


def crb_of_abs_gain(cov2: np.ndarray, g: complex) -> float:
    """CRB of |g| from the (Re g, Im g) covariance block: u^T C u with
    u the unit vector along (Re g, Im g)."""
    if abs(g) == 0.0:
        return math.inf
    u = np.array([g.real, g.imag]) / abs(g)
    return float(u @ cov2 @ u)


@dataclass
class LimitsReport:
    """Fisher information and derived limits for one scenario."""

    scenario: Scenario
    fim: np.ndarray                      # full multi-band FIM
    fim_bands: list[np.ndarray]          # per-band terms of the sum (full layout)
    fim_single: list[np.ndarray]         # single-band FIMs (5K layout)
    cov_full: np.ndarray                 # inverse of the full FIM
    cov_single: list[np.ndarray]
    pinv_flag: bool
    pinv_flag_single: list[bool]
    gains: np.ndarray                    # (K, M) complex

    @property
    def index(self) -> ParamIndex:
        return ParamIndex(self.scenario.n_paths, self.scenario.n_bands)

    # exact multi-band CRBs ---------------------------------------------------
    def crb(self, param: str, k: int) -> float:
        i = getattr(self.index, param)(k)
        return float(self.cov_full[i, i])

    def crb_band(self, param: str, k: int, m: int) -> float:
        K = self.scenario.n_paths
        offset = {"tau": 0, "aod": K, "aoa": 2 * K}[param]
        i = offset + k
        return float(self.cov_single[m][i, i])

    def approx_crb(self, param: str, k: int, bands: list[int] | None = None) -> float:
        """Harmonic combination of per-band CRBs (inverse-variance sum)."""
        ms = range(self.scenario.n_bands) if bands is None else bands
        inv = sum(1.0 / self.crb_band(param, k, m) for m in ms)
        return 1.0 / inv

    # estimation SNR ----------------------------------------------------------
    def esnr(self, k: int, m: int) -> float:
        """Joint multi-band ESNR of path k's gain on band m (linear)."""
        g = self.gains[k, m]
        if abs(g) == 0.0:
            return 0.0
        idx = self.index
        sel = [idx.re_g(k, m), idx.im_g(k, m)]
        crb = crb_of_abs_gain(self.cov_full[np.ix_(sel, sel)], g)
        return abs(g) ** 2 / crb

    def esnr_band(self, k: int, m: int) -> float:
        """Single-band ESNR of path k on band m (linear)."""
        g = self.gains[k, m]
        if abs(g) == 0.0:
            return 0.0
        K = self.scenario.n_paths
        sel = [3 * K + k, 4 * K + k]
        crb = crb_of_abs_gain(self.cov_single[m][np.ix_(sel, sel)], g)
        return abs(g) ** 2 / crb


def fim(scenario: Scenario, cov: CovarianceSet) -> LimitsReport:
    """Assemble the full and per-band Fisher information for a scenario."""
    M = scenario.n_bands
    fims = []
    fims_single = []
    for m in range(M):
        fims.append(fim_from_jacobian(jacobian(scenario, m), cov[m]))
        fims_single.append(fim_from_jacobian(jacobian_band(scenario, m), cov[m]))
    F = np.sum(fims, axis=0)
    cov_full, flag = _scaled_inverse(F)
    cov_single, flags = [], []
    for Fm in fims_single:
        Ci, fi = _scaled_inverse(Fm)
        cov_single.append(Ci)
        flags.append(fi)
    return LimitsReport(
        scenario=scenario,
        fim=F,
        fim_bands=fims,
        fim_single=fims_single,
        cov_full=cov_full,
        cov_single=cov_single,
        pinv_flag=flag,
        pinv_flag_single=flags,
        gains=channel.path_gains(scenario),
    )


# ---------------------------------------------------------------------------
# bistatic geometric gain map
# ---------------------------------------------------------------------------

GAMMA_DB_FLOOR = -250.0


@dataclass
class BggMap:
    """Gridded geometric gain ratio per sub-band (dB)."""

    xs: np.ndarray               # (nx,)
    ys: np.ndarray               # (ny,)
    gamma_db: np.ndarray         # (M, ny, nx), NaN on masked cells
    mask: np.ndarray             # (ny, nx) True where the cell is singular


def _pap_value(angle: float, ref: float, kappa: float) -> float:
    from scipy.special import i0

    return math.exp(kappa * math.cos(angle - ref)) / (TWO_PI * i0(kappa))


def bgg_map(
    scenario: Scenario,
    bbox: tuple[float, float, float, float],
    n_cells: tuple[int, int] = (256, 256),
) -> BggMap:
    """Geometric specular-to-(diffuse + noise) power ratio over a 2-D box.

    The specular numerator follows the bistatic two-way spreading law; the
    diffuse denominator evaluates the delay profile at the point's total
    delay and the angular profiles at its departure/arrival angles,
    normalized by the direct path's coefficient power.  Contours reduce to
    classical Cassini ovals when the diffuse ratio is zero.
    """
    if scenario.tx_pos is None or scenario.rx_pos is None:
        raise ValueError("bgg_map requires tx_pos and rx_pos")
    x0, y0, x1, y1 = bbox
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate bounding box")
    nx, ny = n_cells
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)

    los = scenario.paths[0]
    tau1 = los.delay
    c = SPEED_OF_LIGHT
    M = scenario.n_bands
    out = np.full((M, ny, nx), np.nan)
    mask = np.zeros((ny, nx), dtype=bool)

    cell = max((x1 - x0) / max(nx - 1, 1), (y1 - y0) / max(ny - 1, 1))
    eps = 0.5 * cell

    for iy, y in enumerate(ys):
        for ix, x in enumerate(xs):
            p = (x, y)
            d_tx = math.hypot(x - scenario.tx_pos[0], y - scenario.tx_pos[1])
            d_rx = math.hypot(x - scenario.rx_pos[0], y - scenario.rx_pos[1])
            if d_tx < eps or d_rx < eps:
                mask[iy, ix] = True
                continue
            bi = cartesian_to_bistatic(p, scenario.tx_pos, scenario.rx_pos,
                                       scenario.tx_broadside, scenario.rx_broadside)
            for m in range(M):
                band = scenario.sub_bands[m]
                p_sc = scenario.tx_psd * band.subcarrier_spacing
                g_sc = p_sc / ((4.0 * math.pi) ** 2
                               * (c * bi.tau_d) ** 2 * (c * bi.tau_a) ** 2)
                g1m = channel.path_gain(scenario, 0, m)
                beta = band.decay_rate * (band.n_subcarriers - 1) * TWO_PI * band.subcarrier_spacing
                alpha = scenario.dmc_ratio
                peak = alpha * abs(g1m) ** 2
                if bi.tau < tau1:
                    p_ds = 0.0
                elif bi.tau == tau1:
                    p_ds = peak / 2.0
                else:
                    p_ds = peak * math.exp(-beta * (bi.tau - tau1))
                kt = band.vmd_kappa_tx if band.vmd_kappa_tx is not None else 0.0
                kr = band.vmd_kappa_rx if band.vmd_kappa_rx is not None else 0.0
                p_as_t = _pap_value(bi.aod, los.aod, kt)
                p_as_r = _pap_value(bi.aoa, los.aoa, kr)
                gamma1_sq = abs(los.coeffs[m]) ** 2
                g_dmc = p_ds * p_as_t * p_as_r / gamma1_sq
                gamma = g_sc / (g_dmc + scenario.noise_var(m))
                out[m, iy, ix] = max(10.0 * math.log10(gamma), GAMMA_DB_FLOOR)
    return BggMap(xs, ys, out, mask)
