"""Monte-Carlo evaluation: truth association, RMSE/CRB sweeps, detection curves.

Detection bookkeeping follows the normalized-region rule: an estimate
detects a true path when their distance in resolution units is at most
the detection radius; estimates outside every region are false alarms; a
trial counts as detected only when every true path has at least one
detector.  Single-band estimators are evaluated on their alias-expanded
estimate sets (a grating-lobe duplicate outside every region is a false
alarm even though its sibling detects the path).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import channel, fusion, limits
from .estimator import BandEstimator, EstimateRound, SingleBandEstimate, make_band_estimators
from .fusion import FinalEstimate, TmapContext, enumerate_aliases, tmap
from .scenario import AlgorithmConfig, Scenario


# ---------------------------------------------------------------------------
# truth association
# ---------------------------------------------------------------------------

@dataclass
class Association:
    detected: np.ndarray          # (K,) bool
    false_alarm: np.ndarray       # (n_est,) bool
    best_match: dict[int, int]    # truth k -> estimate row index (closest in-region)

    @property
    def all_detected(self) -> bool:
        return bool(self.detected.all())

    @property
    def any_false_alarm(self) -> bool:
        return bool(self.false_alarm.any())


def associate_truth(
    estimates: np.ndarray,
    truth: np.ndarray,
    ctx: TmapContext,
    radius: float,
) -> Association:
    """Match an (n, 3) estimate set against (K, 3) truth triples."""
    est = np.asarray(estimates, float).reshape(-1, 3)
    tru = np.asarray(truth, float).reshape(-1, 3)
    K, n = len(tru), len(est)
    detected = np.zeros(K, bool)
    fa = np.ones(n, bool)
    best = {}
    if n == 0:
        return Association(detected, fa, best)
    t_est = np.stack([tmap(ctx, *e) for e in est])
    for k in range(K):
        d = np.linalg.norm(t_est - tmap(ctx, *tru[k]), axis=1)
        inside = d <= radius
        if inside.any():
            detected[k] = True
            fa[inside] = False
            best[k] = int(np.argmin(np.where(inside, d, np.inf)))
    return Association(detected, fa, best)


def expand_aliases(est: SingleBandEstimate, scenario: Scenario) -> np.ndarray:
    """All alias versions of a single-band estimate as an (n, 3) array."""
    band = scenario.sub_bands[est.band]
    arr = scenario.arrays
    rows = []
    for p in est.paths:
        for _, aod in enumerate_aliases(p.aod, band.wavelength, arr.spacing_tx):
            for _, aoa in enumerate_aliases(p.aoa, band.wavelength, arr.spacing_rx):
                rows.append((p.tau, aod, aoa))
    return np.array(rows).reshape(-1, 3)


def truth_triples(scenario: Scenario) -> np.ndarray:
    return np.array([(p.delay, p.aod, p.aoa) for p in scenario.paths])


# ---------------------------------------------------------------------------
# per-trial outcome
# ---------------------------------------------------------------------------

ESTIMATOR_MULTI = "multi"


def band_label(scenario: Scenario, m: int) -> str:
    return f"band{m + 1}_{scenario.sub_bands[m].carrier_freq / 1e9:g}GHz"


@dataclass
class TrialOutcome:
    """Estimates and detection outcomes of one Monte-Carlo trial."""

    seed: int
    trial: int
    estimates: dict[str, np.ndarray]           # estimator -> (n, 3) triples
    associations: dict[str, Association]
    errors: dict[str, dict[int, np.ndarray]]   # estimator -> {k: (dtau, daod, daoa)}


def _trial_outcome(
    scenario: Scenario,
    ctx: TmapContext,
    algo: AlgorithmConfig,
    band_ests: list[SingleBandEstimate],
    final: FinalEstimate,
    seed: int,
    trial: int,
) -> TrialOutcome:
    tru = truth_triples(scenario)
    sets: dict[str, np.ndarray] = {ESTIMATOR_MULTI: final.triples()}
    for est in band_ests:
        sets[band_label(scenario, est.band)] = expand_aliases(est, scenario)
    assoc = {}
    errors = {}
    for name, triples in sets.items():
        a = associate_truth(triples, tru, ctx, algo.detection_radius)
        assoc[name] = a
        errs = {}
        for k, idx in a.best_match.items():
            errs[k] = triples[idx] - tru[k]
        errors[name] = errs
    return TrialOutcome(seed, trial, sets, assoc, errors)


def run_trial(
    scenario: Scenario,
    estimators: list[BandEstimator],
    algo: AlgorithmConfig,
    cov,
    seed: int,
    trial: int,
    floor_db: float | None = None,
) -> tuple[TrialOutcome, list[SingleBandEstimate]]:
    """Sample one channel draw, run every band estimator, fuse, evaluate."""
    h = channel.sample_realization(scenario, cov, seed, trial)
    band_ests = [est.estimate(h.band(scenario, est.m), floor_db) for est in estimators]
    final = fusion.run_fusion(band_ests, scenario, algo)
    ctx = TmapContext.from_scenario(scenario)
    return _trial_outcome(scenario, ctx, algo, band_ests, final, seed, trial), band_ests


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def wilson_interval(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson 95% score interval for a binomial proportion."""
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    den = 1.0 + z * z / trials
    center = (p + z * z / (2 * trials)) / den
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / den
    return max(0.0, center - half), min(1.0, center + half)


@dataclass
class DetectionStats:
    n_trials: int = 0
    n_detected: int = 0
    n_false_alarm: int = 0

    @property
    def pd(self) -> float:
        return self.n_detected / self.n_trials if self.n_trials else 0.0

    @property
    def pfa(self) -> float:
        return self.n_false_alarm / self.n_trials if self.n_trials else 0.0


@dataclass
class SweepPoint:
    """Aggregated Monte-Carlo results at one sweep setting."""

    value: float                                   # swept quantity (dBm/Hz or dB)
    detection: dict[str, DetectionStats] = field(default_factory=dict)
    sq_errors: dict[str, dict[str, dict[int, list[float]]]] = field(default_factory=dict)

    def add(self, outcome: TrialOutcome) -> None:
        for name, a in outcome.associations.items():
            st = self.detection.setdefault(name, DetectionStats())
            st.n_trials += 1
            st.n_detected += int(a.all_detected)
            st.n_false_alarm += int(a.any_false_alarm)
            per = self.sq_errors.setdefault(name, {"tau": {}, "aod": {}, "aoa": {}})
            for k, err in outcome.errors[name].items():
                per["tau"].setdefault(k, []).append(err[0] ** 2)
                per["aod"].setdefault(k, []).append(err[1] ** 2)
                per["aoa"].setdefault(k, []).append(err[2] ** 2)

    def rmse(self, name: str, param: str, k: int) -> float | None:
        vals = self.sq_errors.get(name, {}).get(param, {}).get(k)
        if not vals:
            return None
        return math.sqrt(float(np.mean(vals)))

    def n_detections(self, name: str, param: str, k: int) -> int:
        return len(self.sq_errors.get(name, {}).get(param, {}).get(k, ()))


def crb_overlays(scenario: Scenario, k: int) -> dict[str, dict[str, float]]:
    """Exact multi-band and per-band CRBs for the overlay columns."""
    cov = channel.assemble_covariances(scenario)
    rep = limits.fim(scenario, cov)
    out = {ESTIMATOR_MULTI: {p: rep.crb(p, k) for p in ("tau", "aod", "aoa")}}
    for m in range(scenario.n_bands):
        out[band_label(scenario, m)] = {p: rep.crb_band(p, k, m) for p in ("tau", "aod", "aoa")}
    return out


def rmse_sweep(
    scenario: Scenario,
    algo: AlgorithmConfig,
    powers_dbm_per_hz: list[float],
    n_trials: int,
    master_seed: int,
    progress=None,
) -> list[SweepPoint]:
    """Monte-Carlo RMSE / PD / PFA against transmit PSD.

    One pass yields the numerical-error tables *and* the detection curve:
    every sweep point carries per-estimator detection statistics, so the
    receiver operating points fall out of the same run.
    """
    points = []
    for value in powers_dbm_per_hz:
        sc_p = scenario.with_tx_psd(10.0 ** ((value - 30.0) / 10.0))
        cov = channel.assemble_covariances(sc_p)
        estimators = make_band_estimators(sc_p, cov, algo)
        pt = SweepPoint(value)
        for t in range(n_trials):
            outcome, _ = run_trial(sc_p, estimators, algo, cov, master_seed, t)
            pt.add(outcome)
        points.append(pt)
        if progress is not None:
            progress(pt)
    return points


# ---------------------------------------------------------------------------
# reporting-floor sweep (threshold ladder at fixed power)
# ---------------------------------------------------------------------------

@dataclass
class RocPoint:
    value: float
    pd: float
    pfa: float
    n_trials: int
    pd_lo: float = 0.0
    pd_hi: float = 1.0
    pfa_lo: float = 0.0
    pfa_hi: float = 1.0

    @classmethod
    def from_stats(cls, value: float, st: DetectionStats) -> "RocPoint":
        pd_lo, pd_hi = wilson_interval(st.n_detected, st.n_trials)
        pfa_lo, pfa_hi = wilson_interval(st.n_false_alarm, st.n_trials)
        return cls(value, st.pd, st.pfa, st.n_trials, pd_lo, pd_hi, pfa_lo, pfa_hi)


def _rounds_at_floor(rounds: list[EstimateRound], floor_db: float, band: int) -> SingleBandEstimate:
    """Replay a detection trajectory at a higher reporting floor.

    Keeps the longest snapshot prefix whose rounds all clear the floor,
    then filters the surviving snapshot's paths by the floor.
    """
    floor_lin = 10.0 ** (floor_db / 10.0)
    chosen = None
    for r in rounds:
        if r.weakest_esnr >= floor_lin:
            chosen = r
        else:
            break
    if chosen is None:
        return SingleBandEstimate(band, [])
    paths = [p for p in chosen.estimate.paths if p.esnr >= floor_lin]
    return SingleBandEstimate(band, paths, chosen.estimate.pinv_flag)


def roc_sweep(
    scenario: Scenario,
    algo: AlgorithmConfig,
    floors_db: list[float],
    n_trials: int,
    master_seed: int,
    progress=None,
) -> dict[str, list[RocPoint]]:
    """Trace detection operating points by sweeping the reporting floor.

    The estimator runs once per trial at the lowest floor of the ladder,
    recording a snapshot per detection round; higher floors replay the
    trajectory without re-estimation.
    """
    floors = sorted(floors_db)
    cov = channel.assemble_covariances(scenario)
    estimators = make_band_estimators(scenario, cov, algo)
    ctx = TmapContext.from_scenario(scenario)
    stats: dict[str, list[DetectionStats]] = {}
    for t in range(n_trials):
        h = channel.sample_realization(scenario, cov, master_seed, t)
        all_rounds = [est.estimate_rounds(h.band(scenario, est.m), floors[0])
                      for est in estimators]
        for i, floor in enumerate(floors):
            band_ests = [_rounds_at_floor(r, floor, est.m)
                         for r, est in zip(all_rounds, estimators)]
            final = fusion.run_fusion(band_ests, scenario, algo)
            outcome = _trial_outcome(scenario, ctx, algo, band_ests, final,
                                     master_seed, t)
            for name, a in outcome.associations.items():
                line = stats.setdefault(name, [DetectionStats() for _ in floors])
                line[i].n_trials += 1
                line[i].n_detected += int(a.all_detected)
                line[i].n_false_alarm += int(a.any_false_alarm)
        if progress is not None and (t + 1) % 64 == 0:
            progress(t + 1)
    return {name: [RocPoint.from_stats(floors[i], line[i]) for i in range(len(floors))]
            for name, line in stats.items()}


def isotonic_pd(pfa: np.ndarray, pd: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators cleanup: non-decreasing PD along increasing PFA."""
    order = np.argsort(pfa, kind="stable")
    y = pd[order].astype(float).copy()
    w = np.ones_like(y)
    blocks = [[y[i], w[i], [i]] for i in range(len(y))]
    merged = []
    for b in blocks:
        merged.append(b)
        while len(merged) > 1 and merged[-2][0] > merged[-1][0]:
            v2, w2, i2 = merged.pop()
            v1, w1, i1 = merged.pop()
            merged.append([(v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, i1 + i2])
    out = np.empty_like(y)
    for v, _, idxs in merged:
        for i in idxs:
            out[i] = v
    res = np.empty_like(out)
    res[order] = out
    return res


# ---------------------------------------------------------------------------
# power-delay-profile export
# ---------------------------------------------------------------------------

def pdp_rows(scenario: Scenario, n_draws: int, master_seed: int) -> list[tuple[float, float, int]]:
    """Averaged delay-domain profile rows (delay_ns, power_dbm, band_index)."""
    cov = channel.assemble_covariances(scenario)
    rows = []
    for m in range(scenario.n_bands):
        band = scenario.sub_bands[m]
        acc = np.zeros(band.n_subcarriers)
        for t in range(n_draws):
            h = channel.sample_realization(scenario, cov, master_seed, t)
            acc += channel.band_pdp(h.band(scenario, m), band.n_subcarriers,
                                    scenario.arrays.n_tx, scenario.arrays.n_rx)
        acc /= n_draws
        delays = np.arange(band.n_subcarriers) / band.occupied_bandwidth
        for q in range(band.n_subcarriers):
            p_dbm = 10.0 * math.log10(max(acc[q], 1e-300)) + 30.0
            rows.append((delays[q] * 1e9, p_dbm, m + 1))
    return rows
