"""Run configuration: an INI file with a single ``[run]`` section.

Every key is checked against :data:`SCHEMA`; unknown keys and values that do
not parse are configuration errors.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable

from .errors import ConfigError


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        s = s.strip()
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return s
    return parse


def _str(s: str) -> str:
    return s.strip()


# key -> (parser, default as written in a config file)
SCHEMA: dict[str, tuple[Callable[[str], Any], str]] = {
    "seed": (int, "0"),
    "kind": (_choice("data_driven", "hrrr_corrective", "hybrid"), "hrrr_corrective"),
    "pairing": (_choice("same_lead_dual", "next_lead_dual", "next_lead_pair"),
                "same_lead_dual"),
    "horizon": (int, "12"),
    "sigma_min": (float, "0.002"),
    "sigma_max": (float, "80"),
    "num_steps": (int, "18"),
    "rho": (float, "7"),
    "sigma_data": (float, "1.0"),
    "p_mean": (float, "-1.2"),
    "p_std": (float, "1.2"),
    "alpha": (float, "0.8"),
    "epsilon": (float, "1e-6"),
    "weight_units": (_choice("normalized", "mm/h"), "normalized"),
    "lr": (float, "1e-3"),
    "train_steps": (int, "300"),
    "batch": (int, "8"),
    "width": (int, "16"),
    "tile_km": (float, "64"),
    "min_spacing_km": (float, "30"),
    "min_coverage_fraction": (float, "0.25"),
    "max_candidates": (int, "50"),
    "max_retained": (int, "20"),
    "region_cap": (int, "120"),
    "thresholds_file": (_str, ""),
    "region": (_str, "CONUS"),
    "percentiles": (_ints, "50,90"),
    "neighborhoods": (_ints, "27,5"),
    "exclude_zero_categorical": (_bool, "false"),
    "n_boot": (int, "1000"),
    "level": (float, "0.95"),
    "tolerance_km": (float, "10"),
    "bins": (_floats, ""),
    "interval_error_both": (_bool, "false"),
    "segment": (int, "64"),
    "overlap": (float, "0.5"),
    "window": (_choice("hann", "none"), "hann"),
    "coherence_squared": (_bool, "false"),
    "pdf_edges": (_floats, "0,0.1,0.5,1,2,4,8,16,32,64,128"),
    "pdf_exclude_zero": (_bool, "true"),
}


@dataclass(frozen=True)
class RunConfig:
    values: dict

    def __getattr__(self, key: str):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.values.items()}

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _parse(raw: dict[str, str]) -> RunConfig:
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    values = {}
    for key, (parser, default) in SCHEMA.items():
        text = raw.get(key, default)
        try:
            values[key] = parser(text)
        except ValueError as e:
            raise ConfigError(f"config key {key!r}: {e}") from None
    if values["horizon"] < 1 or values["horizon"] > 12:
        raise ConfigError("horizon must be in 1..12")
    if values["n_boot"] < 1 or not 0 < values["level"] < 1:
        raise ConfigError("n_boot must be positive and level in (0, 1)")
    if any(n < 1 or n % 2 == 0 for n in values["neighborhoods"]):
        raise ConfigError("neighborhood sizes must be odd and positive")
    return RunConfig(values)


def load_config(path: str | Path | None = None,
                overrides: Iterable[str] = ()) -> RunConfig:
    """Defaults, then the ``[run]`` section of ``path``, then ``key=value``
    overrides."""
    raw: dict[str, str] = {}
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except configparser.Error as e:
            raise ConfigError(f"cannot parse {path}: {e}") from None
        extra = [s for s in cp.sections() if s != "run"]
        if extra:
            raise ConfigError(f"unknown config section(s): {', '.join(extra)}")
        if cp.has_section("run"):
            raw.update(cp["run"])
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        k, v = item.split("=", 1)
        raw[k.strip()] = v
    return _parse(raw)
