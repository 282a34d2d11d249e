"""Command-line entry points.

Every command writes its outputs plus a ``manifest.json`` into ``--out``.
Manifests carry no timestamps, so a rerun with the same configuration, seed
and inputs reproduces every file byte for byte.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure. ``RESDIFFCAST_NUM_THREADS`` caps the BLAS/OpenMP thread pools.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import replace
from datetime import timedelta
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np
import scipy

from . import config as config_mod
from .dataset import (DirectorySource, build_training_set, fit_normalizers,
                      residual_target, state_from_source)
from .edm import (SigmaSchedule, TinyConvDenoiser, fit, load_checkpoint,
                  save_checkpoint)
from .errors import ConfigError, DataError, NumericError, ResdiffError
from .gridio import (GridField, NormStats, TileSpec, bilinear_regrid, mosaic,
                     parse_time, read_grid, write_grid)
from .loss import LossConfig, weight_table
from .rollout import (ConfigKind, DualPairing, Normalizers, StepOracle, channel_names,
                      run, write_manifest)
from .sampler import (RegionMap, SamplingCriteria, balance_indices, sample_timestep,
                      timestep_rng, write_tile_manifest)
from .spectral import (FFT_CONVENTION, intensity_pdf, power_spectrum_2d,
                       spectral_coherence, write_coherence_csv, write_pdf_csv,
                       write_spectrum_csv)
from .synthworld import WorldConfig, gen_ari, gen_pseudo_hrrr, gen_region_codes, gen_truth
from .uq import coverage_rate, fixed_bins, make_scenarios, percentile_bins, write_coverage_csv
from .verify import (MetricReport, ThresholdTable, bootstrap_ci, csi,
                     mean_fss, pod, pooled_mae, pooled_score, write_reports_csv,
                     write_reports_json)

THREADS_ENV = "RESDIFFCAST_NUM_THREADS"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _versions() -> dict:
    try:
        pkg = version("resdiffcast")
    except PackageNotFoundError:
        pkg = "unknown"
    return {"resdiffcast": pkg, "numpy": np.__version__, "scipy": scipy.__version__}


class Run:
    """Collects inputs and outputs of one command and writes the manifest."""

    def __init__(self, command: str, cfg: config_mod.RunConfig, out: str | Path):
        self.command, self.cfg = command, cfg
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.inputs: list[Path] = []
        self.outputs: list[str] = []
        self.extra: dict = {}

    def use(self, path: str | Path) -> Path:
        p = Path(path)
        if not p.exists():
            raise DataError(f"input not found: {p}")
        self.inputs.append(p)
        return p

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        if name in self.outputs:
            raise ConfigError(f"output {name} written twice")
        self.outputs.append(name)
        return p

    def finish(self) -> None:
        doc = {
            "command": self.command,
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.digest(),
            "inputs": [{"path": str(p), "sha256": _sha256(p)} for p in self.inputs],
            "outputs": sorted(self.outputs),
            "versions": _versions(),
            **self.extra,
        }
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _schedule(cfg) -> SigmaSchedule:
    return SigmaSchedule(cfg.sigma_min, cfg.sigma_max, cfg.num_steps, cfg.rho, cfg.sigma_data)


def _time(s: str):
    try:
        return parse_time(s)
    except ResdiffError:
        raise ConfigError(f"bad time {s!r}; expected e.g. 2024-05-01T03:00Z") from None


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg) -> None:
    world = WorldConfig(ny=args.ny, nx=args.nx, seed=cfg.seed)
    r = Run("synth", cfg, args.out)
    for h in range(args.start, args.start + args.hours):
        t = world.time(h)
        write_grid(gen_truth(world, h), r.path(f"mrms/{t:%Y%m%d%H}.grd"))
        for lead in range(0, args.leads + 1):
            write_grid(gen_pseudo_hrrr(world, h, lead), r.path(f"hrrr/{t:%Y%m%d%H}_f{lead:02d}.grd"))
    write_grid(gen_ari(world), r.path("ari.grd"))
    codes, names = gen_region_codes(world)
    write_grid(GridField(world.geom, codes.astype(np.float64), "region_code", "1"),
               r.path("regions.grd"))
    r.extra["world"] = world.to_dict()
    r.extra["region_names"] = list(names)
    r.finish()


def cmd_regrid(args, cfg) -> None:
    r = Run("regrid", cfg, args.out)
    src = read_grid(r.use(args.src))
    like = read_grid(r.use(args.like))
    write_grid(bilinear_regrid(src, like.geom), r.path(Path(args.src).name))
    r.finish()


def _region_map(path: Path) -> RegionMap:
    g = read_grid(path)
    codes = np.where(np.isfinite(g.values), g.values, -1).astype(np.int64)
    return RegionMap(codes)


def cmd_sample(args, cfg) -> None:
    r = Run("sample", cfg, args.out)
    data = Path(args.data)
    ari = read_grid(r.use(args.ari or data / "ari.grd"))
    regions = _region_map(r.use(args.regions or data / "regions.grd"))
    crit = SamplingCriteria(cfg.min_coverage_fraction, ari, cfg.min_spacing_km,
                            cfg.max_candidates, cfg.max_retained, cfg.tile_km)
    src = DirectorySource(data)
    start = _time(args.start)
    pool, stamps = [], []
    for i in range(args.hours):
        p = r.use(src.mrms_path(start + timedelta(hours=i)))
        for tile in sample_timestep(read_grid(p), crit, timestep_rng(cfg.seed, i)):
            pool.append(tile)
            stamps.append(i)
    keep = balance_indices(pool, regions, cfg.region_cap, np.random.default_rng([cfg.seed, 1]))
    rows = [(stamps[i], replace(pool[i], region=regions.region_of(pool[i]))) for i in keep]
    write_tile_manifest(r.path("tiles.csv"), rows, cfg.seed)
    r.extra["n_pool"] = len(pool)
    r.extra["n_kept"] = len(rows)
    r.finish()


def cmd_targets(args, cfg) -> None:
    r = Run("targets", cfg, args.out)
    kind = ConfigKind(cfg.kind)
    init = _time(args.init)
    src = _tracked_source(r, args.data)
    res = residual_target(kind, src, init, args.lead)
    write_grid(res, r.path(f"residual_{kind.value}_{init:%Y%m%d%H}_f{args.lead:02d}.grd"))
    r.finish()


class _TrackedSource(DirectorySource):
    def __init__(self, root, run: Run):
        super().__init__(root)
        self.run = run

    def _read(self, path):
        if path not in self.run.inputs:
            self.run.use(path)
        return super()._read(path)


def _tracked_source(r: Run, root) -> _TrackedSource:
    return _TrackedSource(root, r)


def cmd_train(args, cfg) -> None:
    r = Run("train", cfg, args.out)
    kind = ConfigKind(cfg.kind)
    src = _tracked_source(r, args.data)
    start = _time(args.start)
    times = [start + timedelta(hours=i) for i in range(args.hours)]
    norms = fit_normalizers(kind, src, times)
    crit = SamplingCriteria(cfg.min_coverage_fraction, None, cfg.min_spacing_km,
                            cfg.max_candidates, cfg.max_retained, cfg.tile_km)
    ts = build_training_set(kind, src, times, norms, crit, cfg.seed)
    d = TinyConvDenoiser(len(channel_names(kind)), cfg.width, cfg.seed)
    loss_cfg = LossConfig(cfg.alpha, cfg.epsilon, weight_units=cfg.weight_units)
    physical = cfg.weight_units == "mm/h"
    hist = fit(d, lambda rng: ts.draw(rng, cfg.batch, physical), cfg.train_steps, _schedule(cfg),
               loss_cfg, cfg.lr, cfg.seed, cfg.p_mean, cfg.p_std)
    save_checkpoint(d, r.path("model.denz"), {"kind": kind.value, "norms": norms.to_dict(),
                                              "channels": list(channel_names(kind))})
    with open(r.path("loss.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "loss"])
        for i, v in enumerate(hist):
            w.writerow([i + 1, f"{v:.8f}"])
    r.finish()


def _denoiser_and_norms(args, cfg, kind, r):
    if args.checkpoint:
        d, header = load_checkpoint(r.use(args.checkpoint))
        ck = header.get("config", {})
        if ck.get("kind") != kind.value:
            raise ConfigError(f"checkpoint was trained for {ck.get('kind')!r}, "
                              f"config asks for {kind.value!r}")
        return d, Normalizers.from_dict(ck["norms"])
    unit = NormStats(0.0, 1.0)
    return StepOracle.zero_residual(), Normalizers(unit, unit, unit)


def cmd_rollout(args, cfg) -> None:
    r = Run("rollout", cfg, args.out)
    kind = ConfigKind(cfg.kind)
    pairing = DualPairing(cfg.pairing)
    d, norms = _denoiser_and_norms(args, cfg, kind, r)
    src = _tracked_source(r, args.data)
    init = _time(args.init)
    state = state_from_source(kind, src, init, norms, cfg.horizon, pairing)
    sched = _schedule(cfg)
    preds = run(state, d, cfg.horizon, np.random.default_rng(cfg.seed), sched)
    names = []
    for lead, p in enumerate(preds, start=1):
        name = f"pred_f{lead:02d}.grd"
        write_grid(p, r.path(name))
        names.append(name)
        if kind is not ConfigKind.DATA_DRIVEN:
            base = src.hrrr(init, lead)
            res = GridField(p.geom, p.values - base.values, "residual_pred_clamped",
                            "mm/h", p.valid_time)
            write_grid(res, r.path(f"residual_f{lead:02d}.grd"))
    write_manifest(r.path("rollout.json"), state, cfg.seed, sched, names)
    r.finish()


def _bins(cfg, truth: GridField):
    if cfg.bins:
        return fixed_bins(cfg.bins)
    return percentile_bins(truth.values)


def cmd_uq(args, cfg) -> None:
    r = Run("uq", cfg, args.out)
    src = _tracked_source(r, args.data)
    init, lead = _time(args.init), args.lead
    residual = read_grid(r.use(args.residual))
    if not residual.is_residual:
        raise DataError(f"{args.residual} does not hold a residual field")
    prev = None
    if lead > 1 or src.hrrr_path(init, 0).exists():
        prev = src.hrrr(init, lead - 1)
    bounds = make_scenarios(prev, src.hrrr(init, lead), src.hrrr(init, lead + 1), residual)
    truth = src.mrms(init + timedelta(hours=lead))
    for name in ("lower", "middle", "upper"):
        write_grid(getattr(bounds, name), r.path(f"uq_{name}_f{lead:02d}.grd"))
    report = coverage_rate(bounds, truth, cfg.tolerance_km, _bins(cfg, truth),
                           nearest_bound=cfg.interval_error_both)
    write_coverage_csv(r.path("coverage.csv"), report)
    r.extra["early_member"] = "f00" if lead == 1 and prev is not None else (
        "on_time_fallback" if prev is None else f"f{lead - 1:02d}")
    r.finish()


def _thresholds(cfg, r: Run) -> ThresholdTable:
    if cfg.thresholds_file:
        return ThresholdTable.load(r.use(cfg.thresholds_file))
    return ThresholdTable.load()


def cmd_verify(args, cfg) -> None:
    r = Run("verify", cfg, args.out)
    if len(args.pred) != len(args.truth):
        raise ConfigError("--pred and --truth need the same number of files")
    units = [(read_grid(r.use(p)), read_grid(r.use(t))) for p, t in zip(args.pred, args.truth)]
    table = _thresholds(cfg, r)
    months = {u[1].valid_time.strftime("%Y-%m") for u in units if u[1].valid_time}
    month = months.pop() if len(months) == 1 else ""
    reports = []

    def add(i, name, metric, threshold=None, n=None):
        value = metric(units)
        ci = None
        if value is not None and len(units) >= 2:
            ci = bootstrap_ci(metric, units, cfg.n_boot, cfg.level,
                              np.random.default_rng([cfg.seed, i]))
        reports.append(MetricReport(name, value, ci.lo if ci else None,
                                    ci.hi if ci else None, month, cfg.region, args.lead,
                                    threshold, n, len(units)))

    add(0, "mae", pooled_mae)
    i = 1
    for pct in cfg.percentiles:
        thr = table.get(cfg.region, pct)
        add(i, f"pod_p{pct}", pooled_score(pod, thr, cfg.exclude_zero_categorical), thr)
        add(i + 1, f"csi_p{pct}", pooled_score(csi, thr, cfg.exclude_zero_categorical), thr)
        i += 2
        for n in cfg.neighborhoods:
            add(i, f"fss{n}_p{pct}", mean_fss(thr, n), thr, n)
            i += 1
    write_reports_csv(r.path("metrics.csv"), reports)
    write_reports_json(r.path("metrics.json"), reports)
    r.finish()


def cmd_spectra(args, cfg) -> None:
    r = Run("spectra", cfg, args.out)
    pred = read_grid(r.use(args.pred))
    truth = read_grid(r.use(args.truth))
    fill = {}
    filled = []
    for tag, f in (("pred", pred), ("truth", truth)):
        fill[tag] = float(f.missing.mean())
        filled.append(f.derive(f.filled(0.0)))
    pred, truth = filled
    for tag, f in (("pred", pred), ("truth", truth)):
        _, spec = power_spectrum_2d(f, cfg.window)
        write_spectrum_csv(r.path(f"spectrum_{tag}.csv"), spec)
        write_pdf_csv(r.path(f"pdf_{tag}.csv"),
                      intensity_pdf(f, cfg.pdf_edges, cfg.pdf_exclude_zero))
    curve = spectral_coherence(pred, truth, cfg.segment, cfg.overlap, cfg.window,
                               squared=cfg.coherence_squared)
    write_coherence_csv(r.path("coherence.csv"), curve)
    r.extra.update({"fill_fraction": fill, "fft_convention": FFT_CONVENTION,
                    "n_segments": curve.n_segments, "detrend": "mean"})
    r.finish()


def cmd_mosaic(args, cfg) -> None:
    r = Run("mosaic", cfg, args.out)
    like = read_grid(r.use(args.like))
    tiles = []
    with open(r.use(args.index), newline="") as fh:
        for rec in csv.DictReader(fh):
            f = read_grid(r.use(Path(args.index).parent / rec["path"]))
            tiles.append((TileSpec(int(rec["row0"]), int(rec["col0"]), int(rec["size"])), f))
    if not tiles:
        raise DataError("mosaic index lists no tiles")
    write_grid(mosaic(tiles, like.geom), r.path("mosaic.grd"))
    r.finish()


def cmd_weights(args, cfg) -> None:
    r = Run("weights", cfg, args.out)
    y, w = weight_table(args.y_min, args.y_max, args.n, LossConfig(cfg.alpha, cfg.epsilon))
    with open(r.path("weights.csv"), "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["y", "weight"])
        for a, b in zip(y, w):
            out.writerow([f"{a:.6f}", f"{b:.10f}"])
    r.finish()


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="resdiffcast", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with a [run] section")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--out", required=True, help="output directory")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, parents=[common], help=help_, description=help_)
        p.set_defaults(fn=fn)
        return p

    p = add("synth", cmd_synth, "write a synthetic world as grid files")
    p.add_argument("--hours", type=int, default=24)
    p.add_argument("--start", type=int, default=0, help="first hour index")
    p.add_argument("--leads", type=int, default=13, help="highest forecast lead")
    p.add_argument("--ny", type=int, default=256)
    p.add_argument("--nx", type=int, default=256)

    p = add("regrid", cmd_regrid, "bilinear regrid of --src onto the grid of --like")
    p.add_argument("--src", required=True)
    p.add_argument("--like", required=True)

    p = add("sample", cmd_sample, "sample training tiles over consecutive hours")
    p.add_argument("--data", required=True)
    p.add_argument("--start", required=True, help="first valid time, e.g. 2024-05-01T00:00Z")
    p.add_argument("--hours", type=int, required=True)
    p.add_argument("--ari", help="ARI grid (default DATA/ari.grd)")
    p.add_argument("--regions", help="region code grid (default DATA/regions.grd)")

    p = add("targets", cmd_targets, "write the residual target for one init time")
    p.add_argument("--data", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--lead", type=int, default=1)

    p = add("train", cmd_train, "train a denoiser on one-hour pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--start", required=True, help="first init time")
    p.add_argument("--hours", type=int, required=True, help="number of init times")

    p = add("rollout", cmd_rollout, "autoregressive rollout from one init time")
    p.add_argument("--data", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--checkpoint", help="DENZ file; omit for the zero-residual denoiser")

    p = add("uq", cmd_uq, "lead-offset bounds and coverage for one lead")
    p.add_argument("--data", required=True)
    p.add_argument("--init", required=True)
    p.add_argument("--lead", type=int, required=True)
    p.add_argument("--residual", required=True)

    p = add("verify", cmd_verify, "MAE, POD, CSI and FSS with bootstrap intervals")
    p.add_argument("--pred", nargs="+", required=True)
    p.add_argument("--truth", nargs="+", required=True)
    p.add_argument("--lead", type=int, default=0)

    p = add("spectra", cmd_spectra, "power spectra, coherence and intensity histograms")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)

    p = add("mosaic", cmd_mosaic, "average overlapping tiles onto a full grid")
    p.add_argument("--index", required=True, help="CSV with row0,col0,size,path")
    p.add_argument("--like", required=True, help="grid file giving the target geometry")

    p = add("weights", cmd_weights, "dump the loss weighting curve")
    p.add_argument("--y-min", type=float, default=-0.1)
    p.add_argument("--y-max", type=float, default=1.0)
    p.add_argument("--n", type=int, default=221)
    return ap


def _thread_limit():
    n = os.environ.get(THREADS_ENV)
    if not n:
        return None
    try:
        k = int(n)
        if k < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {n!r}") from None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=k)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_mod.load_config(args.config, args.set)
        limiter = _thread_limit()
        try:
            args.fn(args, cfg)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except ConfigError as e:
        print(f"resdiffcast {args.command}: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as e:
        print(f"resdiffcast {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as e:
        print(f"resdiffcast {args.command}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
