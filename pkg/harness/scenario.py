"""
Scenario configuration and the Monte-Carlo BER driver.

A scenario is read from an INI file ([slot], [channel], [run], [jdfft] sections)
whose keys map onto the pydantic fields below; command-line flags override file
values. Results go to `<out>/<name>_ber.csv` plus `<name>_manifest.json`.
"""

import configparser
import hashlib
import json
import logging
import math
import os

import numpy as np
import pandas as pd
import scipy.stats
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from config import settings
from detectors.errors import InvalidConfigError
from detectors.jdfft_detector import RADIX2_LENGTH, JdfftOptions
from detectors.structured_matrices import noncirculant_fraction
from simulators.channel import PROFILE_NAMES, make_profile
from simulators.run_simulation import DETECTORS, resolve_detector, run_slots
from simulators.signal_model import SlotConfig

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["detector", "snr_db", "slots", "bits", "errors", "ber", "ci95"]
CONFIDENCE = 0.95


class ScenarioConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = "scenario"
    slot: SlotConfig = Field(default_factory=SlotConfig)
    channel: str = "case1"
    custom_delays: tuple[int, ...] | None = None
    custom_powers: tuple[float, ...] | None = None
    speed_kmh: float = 3.0
    correlated: bool = False
    snr_grid: tuple[float, ...] = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0)
    n_slots: int = Field(default_factory=lambda: settings.DEFAULT_SLOTS)
    detectors: tuple[str, ...] = ("jdfft", "jdchol", "sdchol", "sdfft", "mf")
    jdfft: JdfftOptions = Field(default_factory=JdfftOptions)
    compare_p: bool = False
    cholesky_depth: int | None = None
    master_seed: int = Field(default_factory=lambda: settings.MASTER_SEED)
    scramble_seed: int | None = None
    carrier_hz: float = Field(default_factory=lambda: settings.CARRIER_HZ)
    burst_period_s: float = Field(default_factory=lambda: settings.BURST_PERIOD_S)

    @field_validator("channel")
    @classmethod
    def _known_channel(cls, v):
        if v.lower() not in PROFILE_NAMES:
            raise ValueError(f"unknown channel '{v}', expected one of {list(PROFILE_NAMES)}")
        return v.lower()

    @field_validator("n_slots")
    @classmethod
    def _positive_slots(cls, v):
        if v < 1:
            raise ValueError("n_slots must be at least 1")
        return v

    @field_validator("snr_grid")
    @classmethod
    def _increasing_grid(cls, v):
        if not v:
            raise ValueError("snr_grid must not be empty")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"snr_grid {v} must be strictly increasing")
        return v

    @field_validator("detectors")
    @classmethod
    def _known_detectors(cls, v):
        if not v:
            raise ValueError("at least one detector is required")
        unknown = [d for d in v if d not in DETECTORS]
        if unknown:
            raise ValueError(f"unknown detectors {unknown}, expected a subset of {list(DETECTORS)}")
        return v

    @model_validator(mode="after")
    def _check_consistency(self):
        profile = make_profile(self.channel, self.custom_delays, self.custom_powers, self.speed_kmh)
        if profile.max_delay + 1 > self.slot.w:
            raise ValueError(f"channel {self.channel} reaches delay {profile.max_delay} but w={self.slot.w}")
        self.jdfft.resolve_p(self.slot)
        if self.compare_p and self.slot.n_s > RADIX2_LENGTH:
            raise ValueError(f"compare_p needs n_s <= {RADIX2_LENGTH}")
        return self

    def detector_names(self):
        names = list(self.detectors)
        if self.compare_p:
            names.extend(f"jdfft_p{p}" for p in sorted({self.slot.n_s, RADIX2_LENGTH}))
        return names

    def config_hash(self):
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()


# --- INI parsing ---

def parse_snr_grid(text):
    """'a:b:step' (inclusive of b) or a comma-separated list of dB values."""
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise InvalidConfigError(f"SNR range '{text}' must look like start:stop:step")
        start, stop, step = (float(x) for x in parts)
        if step <= 0:
            raise InvalidConfigError(f"SNR step must be positive, got {step}")
        values = np.arange(start, stop + step / 2, step)
        return tuple(round(float(x), 6) for x in values)
    return tuple(float(x) for x in text.split(",") if x.strip())


def _ints(text):
    return tuple(int(x) for x in str(text).split(",") if x.strip())


def _floats(text):
    return tuple(float(x) for x in str(text).split(",") if x.strip())


def _optional_int(text):
    text = str(text).strip().lower()
    return None if text in ("", "none") else int(text)


_SLOT_KEYS = {
    "sf": int, "k": int, "n_s": int, "w": int, "n_over": int, "p": _optional_int,
    "code_allocation": _ints, "midamble_len": int, "guard_len": int,
}
_JDFFT_KEYS = {"p": _optional_int, "matched_filter": str, "bin_solve": str, "window_extension": "bool"}


def _section(parser, name, keys):
    values = {}
    if not parser.has_section(name):
        return values
    for key, cast in keys.items():
        if not parser.has_option(name, key):
            continue
        values[key] = parser.getboolean(name, key) if cast == "bool" else cast(parser.get(name, key))
    return values


def read_scenario_file(path):
    """Reads an INI scenario file into a nested dict of raw field values."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise InvalidConfigError(f"Scenario file '{path}' could not be read")
    values = {"name": os.path.splitext(os.path.basename(path))[0]}
    values["slot"] = _section(parser, "slot", _SLOT_KEYS)
    values["jdfft"] = _section(parser, "jdfft", _JDFFT_KEYS)
    if parser.has_section("channel"):
        ch = parser["channel"]
        if "name" in ch:
            values["channel"] = ch["name"]
        if "delays" in ch:
            values["custom_delays"] = _ints(ch["delays"])
        if "powers" in ch:
            values["custom_powers"] = _floats(ch["powers"])
        if "speed_kmh" in ch:
            values["speed_kmh"] = ch.getfloat("speed_kmh")
        if "correlated" in ch:
            values["correlated"] = ch.getboolean("correlated")
    if parser.has_section("run"):
        run = parser["run"]
        if "snr" in run:
            values["snr_grid"] = parse_snr_grid(run["snr"])
        if "slots" in run:
            values["n_slots"] = run.getint("slots")
        if "detectors" in run:
            values["detectors"] = tuple(d.strip() for d in run["detectors"].split(",") if d.strip())
        if "master_seed" in run:
            values["master_seed"] = run.getint("master_seed")
        if "scramble_seed" in run:
            values["scramble_seed"] = _optional_int(run["scramble_seed"])
        if "compare_p" in run:
            values["compare_p"] = run.getboolean("compare_p")
        if "cholesky_depth" in run:
            values["cholesky_depth"] = _optional_int(run["cholesky_depth"])
    return values


def build_scenario(file_values=None, overrides=None):
    """
    Merges file values with overrides (flat keys for scenario fields; `slot` and `jdfft`
    sub-dicts merge key by key; `single_user` gives every code to user 1) and validates the result.
    """
    merged = dict(file_values or {})
    for key, value in (overrides or {}).items():
        if key in ("slot", "jdfft"):
            merged[key] = {**merged.get(key, {}), **value}
        else:
            merged[key] = value
    slot_values = merged.pop("slot", {})
    if merged.pop("single_user", False):
        slot_values = {**slot_values, "code_allocation": (1,) * slot_values.get("k", SlotConfig().k)}
    slot = SlotConfig(**slot_values)
    jdfft = JdfftOptions(**merged.pop("jdfft", {}))
    return ScenarioConfig(slot=slot, jdfft=jdfft, **merged)


def load_scenario(path=None, overrides=None):
    return build_scenario(read_scenario_file(path) if path else {}, overrides)


# --- Statistics ---

def clopper_pearson(errors, bits, confidence=CONFIDENCE):
    """Exact binomial interval for errors/bits."""
    if bits <= 0:
        return 0.0, 1.0
    ci = scipy.stats.binomtest(int(errors), int(bits)).proportion_ci(confidence_level=confidence, method="exact")
    return float(ci.low), float(ci.high)


def ber_table(outcomes, scenario, names=None):
    """One row per (detector, SNR): bit-error tally, BER and the 95% half-width."""
    names = names if names is not None else scenario.detector_names()
    rows = []
    for name in names:
        for snr_db in scenario.snr_grid:
            errors = sum(o.errors[(name, snr_db)] for o in outcomes)
            bits = sum(o.bits for o in outcomes)
            low, high = clopper_pearson(errors, bits)
            rows.append({
                "detector": name,
                "snr_db": snr_db,
                "slots": len(outcomes),
                "bits": bits,
                "errors": errors,
                "ber": errors / bits,
                "ci95": (high - low) / 2.0,
            })
    return pd.DataFrame(rows, columns=CSV_COLUMNS)


class PairedComparison(BaseModel):
    """Per-slot comparison of two detectors at one SNR on identical received samples."""

    first: str
    second: str
    snr_db: float
    mean_difference: float
    ci95: float
    first_worse: int
    second_worse: int
    sign_p_value: float

    @property
    def equivalent(self):
        """Zero lies inside the paired 95% interval of the BER difference."""
        return abs(self.mean_difference) <= self.ci95

    @property
    def first_significantly_worse(self):
        return self.mean_difference > 0 and self.sign_p_value < 1.0 - CONFIDENCE


def paired_comparison(outcomes, first, second, snr_db):
    """
    Paired BER difference (first - second) over slots: mean, t-based 95% half-width and
    a two-sided sign test on the per-slot error counts.
    """
    diffs = np.array([(o.errors[(first, snr_db)] - o.errors[(second, snr_db)]) / o.bits for o in outcomes])
    n = diffs.size
    if n > 1:
        sd = float(np.std(diffs, ddof=1))
        half = float(scipy.stats.t.ppf(0.5 + CONFIDENCE / 2, n - 1)) * sd / math.sqrt(n)
    else:
        half = math.inf
    worse = int(np.count_nonzero(diffs > 0))
    better = int(np.count_nonzero(diffs < 0))
    p_value = scipy.stats.binomtest(worse, worse + better, 0.5).pvalue if worse + better else 1.0
    return PairedComparison(first=first, second=second, snr_db=snr_db, mean_difference=float(diffs.mean()),
                            ci95=half, first_worse=worse, second_worse=better, sign_p_value=float(p_value))


# --- Outputs ---

def write_outputs(table, scenario, out_dir):
    """Writes the BER CSV and the run manifest; returns both paths."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{scenario.name}_ber.csv")
    table.to_csv(csv_path, index=False, float_format="%.10g", lineterminator="\n")
    manifest = {
        "scenario": scenario.name,
        "config_hash": scenario.config_hash(),
        "master_seed": scenario.master_seed,
        "scramble_seed": scenario.scramble_seed,
        "slots": scenario.n_slots,
        "detectors": scenario.detector_names(),
        "config": json.loads(scenario.model_dump_json()),
    }
    manifest_path = os.path.join(out_dir, f"{scenario.name}_manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return csv_path, manifest_path


def run_scenario(scenario, out_dir=None, extra_detectors=None, workers=None):
    """
    Runs the Monte-Carlo loop and returns (BER table, per-slot outcomes); writes CSV and
    manifest when `out_dir` is given. `extra_detectors` maps names to callables(SlotContext) -> soft symbols.
    """
    workers = settings.WORKERS if workers is None else workers
    profile = make_profile(scenario.channel, scenario.custom_delays, scenario.custom_powers, scenario.speed_kmh)
    if profile.stand_in:
        logger.warning(f"Channel '{profile.name}' uses a stand-in tap table {profile.delays}")
    for name in scenario.detector_names():
        resolve_detector(name, extra_detectors)
    p = scenario.jdfft.resolve_p(scenario.slot)
    logger.info(f"Scenario '{scenario.name}': {scenario.n_slots} slots, channel {scenario.channel}, "
                f"SNR {list(scenario.snr_grid)} dB, detectors {scenario.detector_names()}")
    logger.info(f"Non-circulant block rows at p={p}: {noncirculant_fraction(scenario.slot.l, p):.1%}")

    outcomes = run_slots(scenario, extra_detectors, workers)
    names = scenario.detector_names() + [n for n in (extra_detectors or {}) if n not in scenario.detector_names()]
    table = ber_table(outcomes, scenario, names)
    for row in table.itertuples():
        logger.info(f"{row.detector:>10} @ {row.snr_db:5.1f} dB: BER {row.ber:.4e} (+/- {row.ci95:.1e})")
    if out_dir is not None:
        csv_path, manifest_path = write_outputs(table, scenario, out_dir)
        logger.info(f"Wrote {csv_path} and {manifest_path}")
    return table, outcomes
