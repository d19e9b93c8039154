"""Scenario files: YAML schema with explicit units in key names.

All dB/dBm/GHz/ns conversions happen here; core modules only ever see SI
units and linear ratios.  One scenario per file.

Schema (keys marked * are optional)::

    name*: two-band-reference
    arrays:
      n_tx: 2
      n_rx: 2
      spacing_tx_m: 0.02
      spacing_rx_m: 0.02
    sub_bands:                      # one entry per band, identical n_subcarriers
      - carrier_freq_ghz: 8.75
        subcarrier_spacing_khz: 1000
        n_subcarriers: 128
        decay_rate: 0.5             # normalized to the measurement bandwidth
        vmd_kappa_tx*: 10.0         # absent -> identity angular covariance
        vmd_kappa_rx*: 10.0
    paths:                          # first entry is the direct path
      - delay_ns: 30.0
        aod_deg: 0.0
        aoa_deg: 0.0
        gain_re: [0.0071, 0.0029]   # one coefficient per band
        gain_im: [0.0, 0.0]
      - delay_ns: 32.55
        aod_deg: 16.72
        aoa_deg: 30.96
        gain_re: [0.0013, 0.0005]
        gain_im: [-0.0095, -0.0038]
        bistatic_tx_delay_ns*: ...  # absent -> derived from (delay, aod)
        bistatic_rx_delay_ns*: ...
        position_m*: [x, y]         # alternative: derive delay/angles from geometry
    tx_psd_dbm_per_hz: -40.0
    dmc_ratio_db: -30.0             # or dmc_ratio: 0.0 for no diffuse tail
    noise_psd_dbm_per_hz: -174.0
    noise_figure_db: 7.0
    geometry*:
      tx_pos_m: [0.0, 0.0]
      rx_pos_m: [8.9938, 0.0]
      tx_broadside*: [1.0, 0.0]
      rx_broadside*: [-1.0, 0.0]
    algorithm*:
      detection_radius: 0.5
      esnr_gate_db: 6.0
      prominence_threshold: 0.2
      max_match_cost: 0.75
      detection_floor_db: 13.0
      max_paths: 8
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict
from pathlib import Path

import yaml

from .scenario import (
    AlgorithmConfig,
    ArrayConfig,
    PathTruth,
    Scenario,
    ScenarioError,
    SubBand,
    cartesian_to_bistatic,
    scatterer_bistatic_split,
    validate,
)


def dbm_per_hz_to_w(v: float) -> float:
    return 10.0 ** ((v - 30.0) / 10.0)


def db_to_linear(v: float) -> float:
    return 10.0 ** (v / 10.0)


def _req(d: dict, key: str, where: str):
    if key not in d:
        raise ScenarioError(f"{where}.{key}: missing required key")
    return d[key]


def load_scenario(path: str | Path) -> tuple[Scenario, AlgorithmConfig]:
    """Parse and validate one scenario file."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ScenarioError("scenario file must contain a mapping")

    bands = []
    for i, b in enumerate(_req(raw, "sub_bands", "scenario")):
        where = f"sub_bands[{i}]"
        bands.append(SubBand(
            carrier_freq=_req(b, "carrier_freq_ghz", where) * 1e9,
            subcarrier_spacing=_req(b, "subcarrier_spacing_khz", where) * 1e3,
            n_subcarriers=int(_req(b, "n_subcarriers", where)),
            decay_rate=float(_req(b, "decay_rate", where)),
            vmd_kappa_tx=b.get("vmd_kappa_tx"),
            vmd_kappa_rx=b.get("vmd_kappa_rx"),
        ))

    a = _req(raw, "arrays", "scenario")
    arrays = ArrayConfig(
        n_tx=int(_req(a, "n_tx", "arrays")),
        n_rx=int(_req(a, "n_rx", "arrays")),
        spacing_tx=float(_req(a, "spacing_tx_m", "arrays")),
        spacing_rx=float(_req(a, "spacing_rx_m", "arrays")),
    )

    geo = raw.get("geometry") or {}
    tx_pos = tuple(geo["tx_pos_m"]) if "tx_pos_m" in geo else None
    rx_pos = tuple(geo["rx_pos_m"]) if "rx_pos_m" in geo else None
    tx_bs = tuple(geo["tx_broadside"]) if "tx_broadside" in geo else None
    rx_bs = tuple(geo["rx_broadside"]) if "rx_broadside" in geo else None

    paths = []
    los_delay = None
    for k, p in enumerate(_req(raw, "paths", "scenario")):
        where = f"paths[{k}]"
        re_part = _req(p, "gain_re", where)
        im_part = _req(p, "gain_im", where)
        if len(re_part) != len(bands) or len(im_part) != len(bands):
            raise ScenarioError(f"{where}: gain lists need one entry per sub-band")
        coeffs = tuple(complex(r, i) for r, i in zip(re_part, im_part))
        if "position_m" in p:
            if tx_pos is None or rx_pos is None:
                raise ScenarioError(f"{where}.position_m requires geometry.tx_pos_m/rx_pos_m")
            bi = cartesian_to_bistatic(p["position_m"], tx_pos, rx_pos, tx_bs, rx_bs)
            delay, aod, aoa = bi.tau, bi.aod, bi.aoa
            bist = None if k == 0 else (bi.tau_d, bi.tau_a)
        else:
            delay = _req(p, "delay_ns", where) * 1e-9
            aod = math.radians(_req(p, "aod_deg", where))
            aoa = math.radians(_req(p, "aoa_deg", where))
            if k == 0:
                bist = None
            elif "bistatic_tx_delay_ns" in p:
                bist = (p["bistatic_tx_delay_ns"] * 1e-9,
                        _req(p, "bistatic_rx_delay_ns", where) * 1e-9)
            else:
                bist = scatterer_bistatic_split(delay, aod, los_delay)
        if k == 0:
            los_delay = delay
        paths.append(PathTruth(delay, aod, aoa, coeffs, bist))

    if "dmc_ratio_db" in raw:
        dmc_ratio = db_to_linear(raw["dmc_ratio_db"])
    else:
        dmc_ratio = float(raw.get("dmc_ratio", 0.0))

    scenario = validate(Scenario(
        sub_bands=tuple(bands),
        arrays=arrays,
        paths=tuple(paths),
        tx_psd=dbm_per_hz_to_w(_req(raw, "tx_psd_dbm_per_hz", "scenario")),
        dmc_ratio=dmc_ratio,
        noise_psd=dbm_per_hz_to_w(_req(raw, "noise_psd_dbm_per_hz", "scenario")),
        noise_figure=db_to_linear(_req(raw, "noise_figure_db", "scenario")),
        tx_pos=tx_pos,
        rx_pos=rx_pos,
        tx_broadside=tx_bs,
        rx_broadside=rx_bs,
        name=str(raw.get("name", Path(path).stem)),
    ))

    algo_raw = raw.get("algorithm") or {}
    known = set(AlgorithmConfig.__dataclass_fields__)
    unknown = set(algo_raw) - known
    if unknown:
        raise ScenarioError(f"algorithm: unknown keys {sorted(unknown)}")
    algo = AlgorithmConfig(**algo_raw)
    return scenario, algo


def scenario_digest(scenario: Scenario, algo: AlgorithmConfig) -> str:
    """Hash of the fully-resolved configuration (SI units, after defaults)."""
    def enc(o):
        if isinstance(o, complex):
            return [o.real, o.imag]
        raise TypeError(type(o).__name__)

    payload = {"scenario": asdict(scenario), "algorithm": asdict(algo)}
    blob = json.dumps(payload, sort_keys=True, default=enc)
    return hashlib.sha256(blob.encode()).hexdigest()
