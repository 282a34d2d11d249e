"""Autoregressive 12-hour rollouts for the three input configurations.

The channel stack for step ``k`` (valid time ``t + k``, "now" ``t + k - 1``)
is a pure function of the rollout state, which makes the per-step update
rules explicit:

* data-driven: the three most recent rainfall fields (observations, then
  predictions) shift forward by one hour each step.
* hybrid: same MRMS shift, and the two HRRR channels advance to leads
  ``k`` and ``k + 1`` of the same cycle.
* HRRR-corrective: the three f01 fields from earlier cycles stay frozen;
  only the current-lead slot advances. The last slot carries an
  unnormalized forecast, chosen by :class:`DualPairing`.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .edm import OracleDenoiser, SigmaSchedule, heun_sample
from .errors import DataError, GeometryError
from .gridio import GridField, GridGeometry, NormStats, format_time
from .residual import reconstruct

MAX_HORIZON = 12


class ConfigKind(enum.Enum):
    DATA_DRIVEN = "data_driven"
    HRRR_CORRECTIVE = "hrrr_corrective"
    HYBRID = "hybrid"


class DualPairing(enum.Enum):
    """What the corrective model's unnormalized slot receives for k >= 2."""

    SAME_LEAD_DUAL = "same_lead_dual"   # (z(fL), fL)
    NEXT_LEAD_DUAL = "next_lead_dual"   # (z(fL+1), fL+1)
    NEXT_LEAD_PAIR = "next_lead_pair"   # (z(fL), fL+1)


AUX_CHANNELS = ("lat", "lon", "hour_sin", "hour_cos", "doy_sin", "doy_cos")
MRMS_CHANNELS = ("mrms_tm2", "mrms_tm1", "mrms_t")

CHANNELS = {
    ConfigKind.DATA_DRIVEN: MRMS_CHANNELS + AUX_CHANNELS,
    ConfigKind.HRRR_CORRECTIVE: ("hrrr_f01_tm3", "hrrr_f01_tm2", "hrrr_f01_tm1",
                                 "hrrr_cur", "hrrr_next_raw") + AUX_CHANNELS,
    ConfigKind.HYBRID: MRMS_CHANNELS + ("hrrr_cur", "hrrr_next") + AUX_CHANNELS,
}


def channel_names(kind: ConfigKind) -> tuple[str, ...]:
    return CHANNELS[kind]


@dataclass(frozen=True)
class Normalizers:
    mrms: NormStats
    hrrr: NormStats
    residual: NormStats

    def to_dict(self) -> dict:
        return {k: getattr(self, k).to_dict() for k in ("mrms", "hrrr", "residual")}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizers":
        return cls(*(NormStats.from_dict(d[k]) for k in ("mrms", "hrrr", "residual")))


@dataclass(frozen=True)
class ChannelStack:
    names: tuple[str, ...]
    data: np.ndarray                 # (C, H, W), model-ready
    sources: tuple[str, ...]

    def channel(self, name: str) -> np.ndarray:
        return self.data[self.names.index(name)]

    def audit(self) -> list[tuple[str, str]]:
        return list(zip(self.names, self.sources))


def aux_planes(geom: GridGeometry, now: datetime) -> np.ndarray:
    """Latitude/longitude scaled to [0, 1] plus sin/cos of hour-of-day and
    day-of-year."""
    lat, lon = geom.latlon()

    def scale(a):
        span = a.max() - a.min()
        return (a - a.min()) / span if span > 0 else np.full_like(a, 0.5)

    h, w = geom.shape
    hour = 2 * np.pi * now.hour / 24.0
    doy = 2 * np.pi * (now.timetuple().tm_yday - 1) / 365.25
    planes = [
        np.broadcast_to(scale(lat)[:, None], (h, w)),
        np.broadcast_to(scale(lon)[None, :], (h, w)),
    ] + [np.full((h, w), v) for v in (np.sin(hour), np.cos(hour), np.sin(doy), np.cos(doy))]
    return np.stack(planes)


@dataclass(frozen=True)
class RolloutState:
    kind: ConfigKind
    init_time: datetime
    geom: GridGeometry
    norms: Normalizers
    archive: Mapping[tuple[int, int], GridField]
    mrms_lags: tuple[GridField, ...] = ()
    base_rain: GridField | None = None
    k: int = 1
    pairing: DualPairing = DualPairing.SAME_LEAD_DUAL
    predictions: tuple[GridField, ...] = ()

    @property
    def valid_time(self) -> datetime:
        return self.init_time + timedelta(hours=self.k)

    @property
    def now(self) -> datetime:
        return self.init_time + timedelta(hours=self.k - 1)

    def hrrr(self, init_offset: int, lead: int) -> GridField:
        try:
            return self.archive[(init_offset, lead)]
        except KeyError:
            raise DataError(
                f"missing HRRR f{lead:02d} from cycle t{init_offset:+d}h "
                f"(step {self.k}, kind {self.kind.value})") from None

    def base(self) -> GridField:
        """Rainfall field the predicted residual is added to at this step."""
        if self.kind is ConfigKind.DATA_DRIVEN:
            return self.base_rain
        return self.hrrr(0, self.k)

    def stack(self) -> ChannelStack:
        return build_stack(self)


def _z(field: GridField, stats: NormStats) -> np.ndarray:
    return np.nan_to_num((field.values - stats.mean) / stats.std, nan=0.0)


def _raw(field: GridField) -> np.ndarray:
    return np.nan_to_num(field.values, nan=0.0)


def build_stack(state: RolloutState) -> ChannelStack:
    kind, k, n = state.kind, state.k, state.norms
    data, sources = [], []

    def add(arr, src):
        data.append(arr)
        sources.append(src)

    if kind in (ConfigKind.DATA_DRIVEN, ConfigKind.HYBRID):
        for f in state.mrms_lags:
            add(_z(f, n.mrms), f"{f.variable}@{format_time(f.valid_time)}:z")
    if kind is ConfigKind.HRRR_CORRECTIVE:
        for off in (-3, -2, -1):
            add(_z(state.hrrr(off, 1), n.hrrr), f"hrrr[t{off:+d}h,f01]:z")
        if k == 1:
            cur, raw = 1, 2
        elif state.pairing is DualPairing.SAME_LEAD_DUAL:
            cur, raw = k, k
        elif state.pairing is DualPairing.NEXT_LEAD_DUAL:
            cur, raw = k + 1, k + 1
        else:
            cur, raw = k, k + 1
        add(_z(state.hrrr(0, cur), n.hrrr), f"hrrr[t+0h,f{cur:02d}]:z")
        add(_raw(state.hrrr(0, raw)), f"hrrr[t+0h,f{raw:02d}]:raw")
    if kind is ConfigKind.HYBRID:
        add(_z(state.hrrr(0, k), n.hrrr), f"hrrr[t+0h,f{k:02d}]:z")
        add(_z(state.hrrr(0, k + 1), n.hrrr), f"hrrr[t+0h,f{k + 1:02d}]:z")
    aux = aux_planes(state.geom, state.now)
    for name, plane in zip(AUX_CHANNELS, aux):
        add(plane, f"{name}@{format_time(state.now)}")
    return ChannelStack(channel_names(kind), np.stack(data), tuple(sources))


def required_leads(kind: ConfigKind, horizon: int,
                   pairing: DualPairing = DualPairing.SAME_LEAD_DUAL) -> list[tuple[int, int]]:
    """Archive keys ``(cycle offset, lead)`` a rollout of ``horizon`` steps reads."""
    if kind is ConfigKind.DATA_DRIVEN:
        return []
    if kind is ConfigKind.HYBRID:
        return [(0, L) for L in range(1, horizon + 2)]
    keys = [(-3, 1), (-2, 1), (-1, 1)] + [(0, L) for L in range(1, max(horizon, 2) + 1)]
    if horizon >= 2 and pairing is not DualPairing.SAME_LEAD_DUAL:
        keys.append((0, horizon + 1))
    return sorted(set(keys))


def init_state(kind: ConfigKind, init_time: datetime, norms: Normalizers,
               mrms_lags: Sequence[GridField] = (),
               archive: Mapping[tuple[int, int], GridField] | None = None,
               pairing: DualPairing = DualPairing.SAME_LEAD_DUAL,
               geom: GridGeometry | None = None) -> RolloutState:
    """Validate inputs and build the step-1 state.

    ``mrms_lags`` are MRMS at ``t-2, t-1, t`` (data-driven and hybrid).
    ``archive`` maps ``(cycle offset in hours, lead)`` to HRRR fields already
    regridded to the target grid; plain integer keys mean the cycle at ``t``.
    """
    archive = {(0, key) if isinstance(key, int) else tuple(key): f
               for key, f in (archive or {}).items()}
    fields = list(mrms_lags) + list(archive.values())
    if geom is None:
        if not fields:
            raise DataError("no input fields given")
        geom = fields[0].geom
    for f in fields:
        if f.geom != geom:
            raise GeometryError(f"channel {f.variable} geometry {f.geom} != {geom}")
    lags = tuple(mrms_lags)
    if kind is not ConfigKind.HRRR_CORRECTIVE:
        if len(lags) != 3:
            raise DataError(f"{kind.value} needs MRMS(t-2), MRMS(t-1), MRMS(t); got {len(lags)}")
    state = RolloutState(kind, init_time, geom, norms, archive, lags,
                         base_rain=lags[-1] if lags else None, pairing=pairing)
    for key in required_leads(kind, 1, pairing):
        state.hrrr(*key)
    return state


def step(state: RolloutState, denoiser, rng: np.random.Generator,
         sched: SigmaSchedule | None = None) -> tuple[GridField, RolloutState]:
    """Sample one residual, reconstruct rainfall and advance the state."""
    if state.k > MAX_HORIZON:
        raise DataError(f"rollout already at the {MAX_HORIZON}-hour horizon")
    sched = sched or SigmaSchedule()
    prepare = getattr(denoiser, "prepare_step", None)
    if prepare is not None:
        prepare(state)
    stack = build_stack(state)
    z = heun_sample(denoiser, stack.data, sched, rng)
    res_stats = state.norms.residual
    base = state.base()
    residual = GridField(state.geom, z * res_stats.std + res_stats.mean,
                         "residual_pred", "mm/h", state.valid_time)
    pred = reconstruct(base, residual)
    nxt = replace(state, k=state.k + 1, predictions=state.predictions + (pred,))
    if state.kind is not ConfigKind.HRRR_CORRECTIVE:
        nxt = replace(nxt, mrms_lags=state.mrms_lags[1:] + (pred,), base_rain=pred)
    return pred, nxt


def run(state: RolloutState, denoiser, horizon: int, rng: np.random.Generator,
        sched: SigmaSchedule | None = None) -> list[GridField]:
    """Predictions valid at ``t+1 .. t+horizon``."""
    if not 1 <= horizon <= MAX_HORIZON:
        raise DataError(f"horizon must be in [1, {MAX_HORIZON}], got {horizon}")
    for key in required_leads(state.kind, horizon, state.pairing):
        state.hrrr(*key)
    preds = []
    for _ in range(horizon):
        pred, state = step(state, denoiser, rng, sched)
        preds.append(pred)
    return preds


class StepOracle:
    """Denoiser whose x0 estimate is a residual supplied per step.

    ``residual_fn(state)`` returns the physical residual (mm/h, array or
    GridField) for ``state.valid_time``; it is z-scored with the state's
    residual statistics.
    """

    def __init__(self, residual_fn: Callable[[RolloutState], np.ndarray | GridField]):
        self.residual_fn = residual_fn
        self._oracle = OracleDenoiser()

    @classmethod
    def zero_residual(cls) -> "StepOracle":
        return cls(lambda s: np.zeros(s.geom.shape))

    @classmethod
    def from_truth(cls, truth_fn: Callable[[datetime], GridField]) -> "StepOracle":
        """Oracle that returns ``truth(valid) - base`` at every step."""
        def residual(state):
            return truth_fn(state.valid_time).values - state.base().values
        return cls(residual)

    def prepare_step(self, state: RolloutState) -> None:
        r = self.residual_fn(state)
        r = np.asarray(getattr(r, "values", r), dtype=np.float64)
        st = state.norms.residual
        self._oracle.target = np.nan_to_num((r - st.mean) / st.std, nan=0.0)

    def __call__(self, x_in, cond, c_noise):
        return self._oracle(x_in, cond, c_noise)


def write_manifest(path: str | Path, state: RolloutState, seed: int,
                   sched: SigmaSchedule, outputs: Sequence[str]) -> None:
    """Rollout manifest: configuration, channel list and per-step outputs."""
    doc = {
        "kind": state.kind.value,
        "init_time": format_time(state.init_time),
        "seed": seed,
        "pairing": state.pairing.value,
        "schedule": {"sigma_min": sched.sigma_min, "sigma_max": sched.sigma_max,
                     "num_steps": sched.num_steps, "rho": sched.rho,
                     "sigma_data": sched.sigma_data},
        "channels": list(channel_names(state.kind)),
        "steps": [{"lead": i + 1,
                   "valid_time": format_time(state.init_time + timedelta(hours=i + 1)),
                   "path": p} for i, p in enumerate(outputs)],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
