"""Multi-band fusion: alias enumeration, Hungarian association, record
maintenance, and inverse-CRB weighted combination.

Angle estimates from a band whose element spacing exceeds half a
wavelength carry grating-lobe aliases; every estimate therefore enters
fusion as a *path group* holding all of its aliased versions.  Groups are
matched across bands on a resolution-normalized parameter space; a
sufficiently prominent match pins down which alias is real.  Resolved
groups accumulate per-band histories whose inverse-CRB weighted means are
the final minimum-variance estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .estimator import SingleBandEstimate
from .scenario import AlgorithmConfig, Scenario

BIG_COST = 1e9
TIE_EPS = 1e-11


# ---------------------------------------------------------------------------
# aliases and normalization
# ---------------------------------------------------------------------------

def enumerate_aliases(angle: float, wavelength: float, spacing: float) -> list[tuple[int, float]]:
    """All grating-lobe aliases of ``angle``: pairs (r, asin(sin a + r lam/d)).

    Includes r = 0 (the principal value).  For spacing at or below half a
    wavelength the set is the singleton principal value.
    """
    ratio = wavelength / spacing
    s0 = math.sin(angle)
    out = []
    r = int(math.floor((-1.0 - s0) / ratio))
    while s0 + r * ratio <= 1.0 + 1e-15:
        s = s0 + r * ratio
        if -1.0 <= s <= 1.0:
            out.append((r, math.asin(max(-1.0, min(1.0, s)))))
        r += 1
    return out


@dataclass(frozen=True)
class TmapContext:
    """Constants of the resolution-aware normalization map."""

    n_subcarriers: int
    f_delta0: float      # subcarrier spacing of the first sub-band
    n_tx: int
    n_rx: int

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> "TmapContext":
        return cls(scenario.sub_bands[0].n_subcarriers,
                   scenario.sub_bands[0].subcarrier_spacing,
                   scenario.arrays.n_tx, scenario.arrays.n_rx)


def tmap(ctx: TmapContext, tau: float, aod: float, aoa: float) -> np.ndarray:
    """Map (tau, aod, aoa) to dimensionless resolution units
    [N f_delta0 tau, 2 sin aod / L_T, 2 sin aoa / L_R]."""
    return np.array([
        ctx.n_subcarriers * ctx.f_delta0 * tau,
        2.0 * math.sin(aod) / ctx.n_tx,
        2.0 * math.sin(aoa) / ctx.n_rx,
    ])


# ---------------------------------------------------------------------------
# path groups
# ---------------------------------------------------------------------------

@dataclass
class PathGroup:
    """One estimated path with its alias sets (a single band's view)."""

    tau: float
    aod_aliases: list[tuple[int, float]]
    aoa_aliases: list[tuple[int, float]]
    crb_tau: float
    crb_aod: float
    crb_aoa: float
    gain: complex
    esnr: float
    band: int

    @property
    def ambiguous(self) -> bool:
        return len(self.aod_aliases) > 1 or len(self.aoa_aliases) > 1

    def version(self, i_aod: int, i_aoa: int) -> tuple[float, float, float]:
        return self.tau, self.aod_aliases[i_aod][1], self.aoa_aliases[i_aoa][1]


def band_path_groups(est: SingleBandEstimate, scenario: Scenario) -> list[PathGroup]:
    """Wrap a single-band estimate into path groups with alias sets."""
    band = scenario.sub_bands[est.band]
    arr = scenario.arrays
    groups = []
    for p in est.paths:
        groups.append(PathGroup(
            tau=p.tau,
            aod_aliases=enumerate_aliases(p.aod, band.wavelength, arr.spacing_tx),
            aoa_aliases=enumerate_aliases(p.aoa, band.wavelength, arr.spacing_rx),
            crb_tau=p.crb_tau, crb_aod=p.crb_aod, crb_aoa=p.crb_aoa,
            gain=p.gain, esnr=p.esnr, band=est.band,
        ))
    return groups


def match_cost(ctx: TmapContext, gp: PathGroup, gi: PathGroup):
    """Minimum normalized distance over every alias combination.

    Returns (cost, prominence, (i_p_aod, i_p_aoa, i_i_aod, i_i_aoa)) where
    prominence is the margin of the best combination over the runner-up
    (infinite when only one combination exists).
    """
    if not (gp.aod_aliases and gp.aoa_aliases and gi.aod_aliases and gi.aoa_aliases):
        raise ValueError("empty alias set")
    combos = []
    for ip in range(len(gp.aod_aliases)):
        for jp in range(len(gp.aoa_aliases)):
            tp = tmap(ctx, *gp.version(ip, jp))
            for ii in range(len(gi.aod_aliases)):
                for ji in range(len(gi.aoa_aliases)):
                    ti = tmap(ctx, *gi.version(ii, ji))
                    combos.append((float(np.linalg.norm(tp - ti)), (ip, jp, ii, ji)))
    combos.sort(key=lambda c: c[0])
    cost, best = combos[0]
    prom = combos[1][0] - cost if len(combos) > 1 else math.inf
    return cost, prom, best


# ---------------------------------------------------------------------------
# fusion state and records
# ---------------------------------------------------------------------------

@dataclass
class _Record:
    """Per-band history of one unambiguous group (zeros mark non-detections)."""

    values: dict[str, list[float]] = field(default_factory=lambda: {"tau": [], "aod": [], "aoa": []})
    weights: dict[str, list[float]] = field(default_factory=lambda: {"tau": [], "aod": [], "aoa": []})
    gains: dict[int, complex] = field(default_factory=dict)

    def pad(self) -> None:
        for p in ("tau", "aod", "aoa"):
            self.values[p].append(0.0)
            self.weights[p].append(0.0)

    def set_slot(self, m: int, vals: dict[str, float], wts: dict[str, float]) -> None:
        for p in ("tau", "aod", "aoa"):
            self.values[p][m] = vals[p]
            self.weights[p][m] = wts[p]


@dataclass
class FusionState:
    """Containers maintained across sub-band iterations.

    ``confirmed`` tracks the unambiguous group ids evidenced at the most
    recent valid (non-gated) iteration; only those groups make the final
    report.  Groups seen on earlier bands stay in the containers for
    matching but are not re-reported without fresh evidence.
    """

    combined: dict[int, dict[str, float]] = field(default_factory=dict)   # unambiguous latest
    ambiguous: dict[int, PathGroup] = field(default_factory=dict)         # awaiting resolution
    records: dict[int, _Record] = field(default_factory=dict)
    confirmed: set[int] = field(default_factory=set)
    next_gid: int = 0
    n_processed: int = 0

    def new_gid(self) -> int:
        gid = self.next_gid
        self.next_gid += 1
        return gid

    @property
    def unambiguous_ids(self) -> list[int]:
        return sorted(self.combined)


@dataclass
class FinalEstimate:
    """Fusion output: combined triples plus per-band gains where detected."""

    paths: list[tuple[float, float, float]]
    gains: list[dict[int, complex]]
    group_ids: list[int]

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    def triples(self) -> np.ndarray:
        return np.array(self.paths).reshape(-1, 3)


def combine(state: FusionState, gid: int) -> dict[str, float] | None:
    """Inverse-CRB weighted mean over the group's per-band history.

    Zero-weight slots contribute nothing; a group with no weight at all is
    skipped (returns ``None``).
    """
    rec = state.records[gid]
    out = {}
    for p in ("tau", "aod", "aoa"):
        w = np.asarray(rec.weights[p])
        v = np.asarray(rec.values[p])
        tot = w.sum()
        if tot <= 0.0:
            return None
        out[p] = float((v * w).sum() / tot)
    return out


def _group_weights(g: PathGroup) -> dict[str, float]:
    return {"tau": 1.0 / g.crb_tau if g.crb_tau > 0 else 0.0,
            "aod": 1.0 / g.crb_aod if g.crb_aod > 0 else 0.0,
            "aoa": 1.0 / g.crb_aoa if g.crb_aoa > 0 else 0.0}


def _as_singleton_group(state: FusionState, gid: int) -> PathGroup:
    """View of an unambiguous group at its latest combined estimate."""
    c = state.combined[gid]
    return PathGroup(c["tau"], [(0, c["aod"])], [(0, c["aoa"])],
                     0.0, 0.0, 0.0, 0j, 0.0, -1)


def associate(
    state: FusionState,
    new_groups: list[PathGroup],
    ctx: TmapContext,
    algo: AlgorithmConfig,
):
    """Hungarian assignment between current groups and a band's new groups.

    Entries above the gating cost are forbidden.  Ties within 1e-9 break
    toward the lower new-group index via an epsilon bias.  Returns
    (matches, unmatched_new) with matches as tuples
    (gid, i_new, cost, prominence, alias_indices).
    """
    gids = state.unambiguous_ids + sorted(state.ambiguous)
    if not gids or not new_groups:
        return [], list(range(len(new_groups)))
    views = [(_as_singleton_group(state, g) if g in state.combined else state.ambiguous[g])
             for g in gids]
    n_p, n_i = len(views), len(new_groups)
    cost = np.full((n_p, n_i), BIG_COST)
    info = {}
    for a, gv in enumerate(views):
        for b, gi in enumerate(new_groups):
            c, prom, combo = match_cost(ctx, gv, gi)
            info[(a, b)] = (c, prom, combo)
            if c <= algo.max_match_cost:
                cost[a, b] = c + TIE_EPS * b
    rows, cols = linear_sum_assignment(cost)
    matches = []
    matched_new = set()
    for a, b in zip(rows, cols):
        if cost[a, b] >= BIG_COST:
            continue
        c, prom, combo = info[(a, b)]
        matches.append((gids[a], int(b), c, prom, combo))
        matched_new.add(int(b))
    unmatched = [b for b in range(n_i) if b not in matched_new]
    return matches, unmatched


def _slot_values(g: PathGroup, i_aod: int, i_aoa: int) -> dict[str, float]:
    return {"tau": g.tau, "aod": g.aod_aliases[i_aod][1], "aoa": g.aoa_aliases[i_aoa][1]}


def update_band(
    state: FusionState,
    band_groups: list[PathGroup],
    ctx: TmapContext,
    algo: AlgorithmConfig,
    band_index: int,
    gate_pass: bool,
) -> None:
    """Run one sub-band iteration: gate, match, resolve, record, combine."""
    m = state.n_processed
    for rec in state.records.values():
        rec.pad()
    if not gate_pass:
        state.n_processed += 1
        return

    matches, unmatched = associate(state, band_groups, ctx, algo)
    touched: set[int] = set()

    for gid, b, cst, prom, (ip, jp, ii, ji) in matches:
        gi = band_groups[b]
        vals_i = _slot_values(gi, ii, ji)
        wts_i = _group_weights(gi)
        if gid in state.ambiguous:
            if prom > algo.prominence_threshold:
                # resolve: back-write the origin-band slot with the winning alias
                gp = state.ambiguous.pop(gid)
                rec = _Record()
                for _ in range(m + 1):
                    rec.pad()
                rec.set_slot(gp.band, _slot_values(gp, ip, jp), _group_weights(gp))
                rec.gains[gp.band] = gp.gain
                rec.set_slot(m, vals_i, wts_i)
                rec.gains[band_index] = gi.gain
                state.records[gid] = rec
                comb = combine(state, gid)
                if comb is not None:
                    state.combined[gid] = comb
                    touched.add(gid)
            # below prominence: stays ambiguous, awaiting a later band
        else:
            rec = state.records[gid]
            rec.set_slot(m, vals_i, wts_i)
            rec.gains[band_index] = gi.gain
            comb = combine(state, gid)
            if comb is not None:
                state.combined[gid] = comb
                touched.add(gid)

    for b in unmatched:
        gi = band_groups[b]
        gid = state.new_gid()
        if gi.ambiguous:
            state.ambiguous[gid] = gi
        else:
            rec = _Record()
            for _ in range(m + 1):
                rec.pad()
            rec.set_slot(m, _slot_values(gi, 0, 0), _group_weights(gi))
            rec.gains[band_index] = gi.gain
            state.records[gid] = rec
            comb = combine(state, gid)
            if comb is not None:
                state.combined[gid] = comb
                touched.add(gid)
    state.confirmed = touched
    state.n_processed += 1


def gate_band(est: SingleBandEstimate, esnr_gate_db: float) -> bool:
    """A band is combined only when at least one path clears the gate."""
    if est.n_paths == 0:
        return False
    gate = 10.0 ** (esnr_gate_db / 10.0)
    return bool(np.any(est.esnrs() >= gate))


def run_fusion(
    band_estimates: list[SingleBandEstimate],
    scenario: Scenario,
    algo: AlgorithmConfig,
) -> FinalEstimate:
    """Fuse per-band estimates in band order; unresolved groups are dropped.

    The report carries the groups evidenced at the last valid iteration
    (their combined estimates use the whole history), so stale claims from
    earlier bands need fresh confirmation before being re-reported.  With
    a single input band the output reproduces that band's estimate
    (principal angles).
    """
    ctx = TmapContext.from_scenario(scenario)
    state = FusionState()
    for est in band_estimates:
        groups = band_path_groups(est, scenario)
        update_band(state, groups, ctx, algo, est.band,
                    gate_pass=gate_band(est, algo.esnr_gate_db))
    paths, gains, ids = [], [], []
    for gid in sorted(state.confirmed):
        c = state.combined[gid]
        paths.append((c["tau"], c["aod"], c["aoa"]))
        gains.append(dict(state.records[gid].gains))
        ids.append(gid)
    return FinalEstimate(paths, gains, ids)
