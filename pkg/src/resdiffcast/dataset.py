"""Field sources and training-set assembly.

A source answers two questions: the observed rainfall valid at an hour, and
the HRRR forecast of a given cycle and lead, already on the target grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import DataError
from .gridio import GridField, compute_stats, read_grid
from .residual import make_delta_target, make_error_target
from .rollout import (ConfigKind, DualPairing, Normalizers, RolloutState, build_stack,
                      init_state, required_leads)
from .sampler import SamplingCriteria, sample_timestep, timestep_rng
from .synthworld import WorldConfig, gen_pseudo_hrrr, gen_truth


class FieldSource(Protocol):
    def mrms(self, valid: datetime) -> GridField: ...
    def hrrr(self, init: datetime, lead: int) -> GridField: ...


class SynthSource:
    """Fields from a synthetic world, cached per hour."""

    def __init__(self, cfg: WorldConfig):
        self.cfg = cfg
        self._cache: dict = {}

    def _hour(self, t: datetime) -> int:
        h = (t - self.cfg.t0).total_seconds() / 3600.0
        if h != int(h):
            raise DataError(f"{t} is not on the hourly grid")
        return int(h)

    def mrms(self, valid):
        key = ("mrms", valid)
        if key not in self._cache:
            self._cache[key] = gen_truth(self.cfg, self._hour(valid))
        return self._cache[key]

    def hrrr(self, init, lead):
        key = ("hrrr", init, lead)
        if key not in self._cache:
            self._cache[key] = gen_pseudo_hrrr(self.cfg, self._hour(init), lead)
        return self._cache[key]


class DirectorySource:
    """Grid files laid out as ``mrms/YYYYmmddHH.grd`` and
    ``hrrr/YYYYmmddHH_fLL.grd`` (cycle time, lead)."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._cache: dict[Path, GridField] = {}

    def mrms_path(self, valid: datetime) -> Path:
        return self.root / "mrms" / f"{valid:%Y%m%d%H}.grd"

    def hrrr_path(self, init: datetime, lead: int) -> Path:
        return self.root / "hrrr" / f"{init:%Y%m%d%H}_f{lead:02d}.grd"

    def _read(self, path: Path) -> GridField:
        if not path.exists():
            raise DataError(f"missing input file {path}")
        if path not in self._cache:
            self._cache[path] = read_grid(path)
        return self._cache[path]

    def mrms(self, valid):
        return self._read(self.mrms_path(valid))

    def hrrr(self, init, lead):
        return self._read(self.hrrr_path(init, lead))


def state_from_source(kind: ConfigKind, source: FieldSource, init_time: datetime,
                      norms: Normalizers, horizon: int = 1,
                      pairing: DualPairing = DualPairing.SAME_LEAD_DUAL) -> RolloutState:
    """Gather the inputs a ``horizon``-step rollout from ``init_time`` reads."""
    lags = ()
    if kind is not ConfigKind.HRRR_CORRECTIVE:
        lags = tuple(source.mrms(init_time + timedelta(hours=h)) for h in (-2, -1, 0))
    archive = {(off, lead): source.hrrr(init_time + timedelta(hours=off), lead)
               for off, lead in required_leads(kind, horizon, pairing)}
    return init_state(kind, init_time, norms, lags, archive, pairing)


def residual_target(kind: ConfigKind, source: FieldSource, init_time: datetime,
                    lead: int = 1) -> GridField:
    """Physical residual the model learns for a one-hour step."""
    valid = init_time + timedelta(hours=lead)
    truth = source.mrms(valid)
    if kind is ConfigKind.DATA_DRIVEN:
        return make_delta_target(truth, source.mrms(valid - timedelta(hours=1)))
    return make_error_target(truth, source.hrrr(init_time, lead))


def fit_normalizers(kind: ConfigKind, source: FieldSource,
                    init_times: Sequence[datetime]) -> Normalizers:
    """Per-variable z-score statistics from the training init times."""
    if not init_times:
        raise DataError("no training init times")
    mrms = compute_stats([source.mrms(t) for t in init_times], variable="mrms_qpe")
    hrrr = compute_stats([source.hrrr(t, L) for t in init_times for L in (1, 2)],
                         variable="hrrr_qpe")
    res = compute_stats([residual_target(kind, source, t) for t in init_times],
                        variable="residual")
    return Normalizers(mrms, hrrr, res)


@dataclass
class TrainingSet:
    kind: ConfigKind
    norms: Normalizers
    cond: np.ndarray            # (N, C, H, W) float32
    target: np.ndarray          # (N, H, W) float32, z-scored residual
    tiles: list                 # per sample: list of TileSpec crops

    def __len__(self) -> int:
        return len(self.target)

    def draw(self, rng: np.random.Generator, batch: int, physical_weights: bool = False):
        """Random (cond, clean) crops, one sampled tile per batch item.

        With ``physical_weights`` a third array holds the target in mm/h, for
        evaluating the loss weights on the physical scale.
        """
        picks = [(i, t) for i, ts in enumerate(self.tiles) for t in ts]
        if not picks:
            raise DataError("training set has no valid tiles")
        sel = rng.integers(0, len(picks), batch)
        cond, clean = [], []
        for j in sel:
            i, t = picks[j]
            sl = (slice(t.row0, t.row0 + t.size), slice(t.col0, t.col0 + t.size))
            cond.append(self.cond[i][(slice(None),) + sl])
            clean.append(self.target[i][sl])
        cond = np.stack(cond).astype(np.float64)
        clean = np.stack(clean).astype(np.float64)
        if physical_weights:
            st = self.norms.residual
            return cond, clean, clean * st.std + st.mean
        return cond, clean


def build_training_set(kind: ConfigKind, source: FieldSource,
                       init_times: Sequence[datetime], norms: Normalizers,
                       criteria: SamplingCriteria, seed: int = 0) -> TrainingSet:
    """One-hour training pairs with tiles sampled on the target rainfall."""
    cond, target, tiles = [], [], []
    for i, t in enumerate(init_times):
        state = state_from_source(kind, source, t, norms)
        res = residual_target(kind, source, t)
        st = norms.residual
        cond.append(build_stack(state).data.astype(np.float32))
        target.append(np.nan_to_num((res.values - st.mean) / st.std).astype(np.float32))
        truth = source.mrms(t + timedelta(hours=1))
        tiles.append(sample_timestep(truth, criteria, timestep_rng(seed, i)))
    return TrainingSet(kind, norms, np.stack(cond), np.stack(target), tiles)
