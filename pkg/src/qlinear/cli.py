"""Command-line entry point: ``qlinear {train,gridsearch,evaluate,forecast,baseline}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, parse_config
from .data import (
    ChannelStats,
    DataError,
    TimeSeriesDataset,
    all_windows,
    apply_standardizer,
    chronological_split,
    fit_standardizer,
    gather_windows,
    invert_standardizer,
    load_csv,
    window_starts,
)
from .metrics import mae, mse, report_header, report_row, repeat_baseline
from .metrics import coverage, forecast_part, levels_are_extrapolated, per_level_pinball, quantile_forecasts
from .model import CheckpointError, QuantileLinearModel, load_checkpoint, param_count, predict_level, save_checkpoint
from .train import M_GRID, NumericalError, TrainReport, grid_search_m, median_errors, train_model

log = logging.getLogger("qlinear")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
CHECKPOINT_FILE = "model.npz"
STATS_FILE = "standardizer.txt"
REPORT_FILE = "train_report.txt"
SUMMARY_FILE = "summary.txt"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass
class PreparedData:
    name: str
    train: TimeSeriesDataset
    val: TimeSeriesDataset
    test: TimeSeriesDataset
    stats: ChannelStats


def write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def prepare_data(cfg: RunConfig, data_path) -> PreparedData:
    ds = load_csv(data_path, date_column=cfg.date_column or None)
    t = cfg.train
    train, val, test = chronological_split(ds, cfg.split_spec(data_path), t.lookback, t.horizon)
    if cfg.standardize:
        stats = fit_standardizer(train)
        train, val, test = (apply_standardizer(d, stats) for d in (train, val, test))
    else:
        stats = ChannelStats(np.zeros(ds.n_channels), np.ones(ds.n_channels), ds.channel_names)
    return PreparedData(Path(data_path).stem, train, val, test, stats)


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    return cfg.with_overrides(
        seed=getattr(args, "seed", None),
        variant=getattr(args, "variant", None),
        horizon=getattr(args, "horizon", None),
        lookback=getattr(args, "lookback", None),
        m=getattr(args, "m", None),
    )


def _provenance(name: str, cfg: RunConfig, extra: dict | None = None) -> str:
    t = cfg.train
    items = {"dataset": name, "variant": t.variant, "lookback": t.lookback,
             "horizon": t.horizon, "m": t.m, "seed": t.seed, **(extra or {})}
    return "# " + ", ".join(f"{k}={v}" for k, v in items.items())


def _report_text(name: str, cfg: RunConfig, report: TrainReport, include_timing: bool = True) -> str:
    config_lines = "".join(f"# config: {line}\n" for line in cfg.to_text().splitlines() if line)
    return _provenance(name, cfg) + "\n" + config_lines + report.to_text(include_timing, include_config=False)


def _save_run(out: Path, name: str, cfg: RunConfig, model: QuantileLinearModel,
              report: TrainReport, stats_ref: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / CHECKPOINT_FILE, stats_ref=stats_ref, config_text=cfg.to_text())
    report.checkpoint = CHECKPOINT_FILE
    write_atomic(out / REPORT_FILE, _report_text(name, cfg, report))


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    if cfg.train.m not in M_GRID:
        log.warning("M=%d is outside the tuning grid %s; training anyway", cfg.train.m, M_GRID)
    data = prepare_data(cfg, args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data.stats.save(out / STATS_FILE)
    model, report = train_model(cfg.train, data.train, data.val)
    _save_run(out, data.name, cfg, model, report, stats_ref=STATS_FILE)
    print(f"best epoch {report.best_epoch}: val MAE {report.best_val_mae!r}")
    print(f"wrote {out / CHECKPOINT_FILE}, {out / STATS_FILE}, {out / REPORT_FILE}")
    return EXIT_OK


def _grid_worker(cfg: RunConfig, m: int, train, val):
    return train_model(cfg.train.with_(m=m), train, val)


def cmd_gridsearch(args) -> int:
    cfg = resolve_config(args)
    grid = tuple(sorted(set(cfg.grid)))
    data = prepare_data(cfg, args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data.stats.save(out / STATS_FILE)

    def record(m, model, report):
        run_cfg = cfg.with_overrides(m=m)
        _save_run(out / f"m_{m}", data.name, run_cfg, model, report, stats_ref=f"../{STATS_FILE}")
        log.info("M=%d: best val MAE %.6f", m, report.best_val_mae)

    jobs = args.jobs if args.jobs is not None else cfg.jobs
    if jobs > 1:
        models, reports = {}, {}
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {m: pool.submit(_grid_worker, cfg, m, data.train, data.val) for m in grid}
            for m in grid:
                models[m], reports[m] = futures[m].result()
                record(m, models[m], reports[m])
        best_m = min(grid, key=lambda m: (reports[m].best_val_mae, m))
    else:
        result = grid_search_m(cfg.train, grid, data.train, data.val, on_result=record)
        best_m, models, reports = result.best_m, result.models, result.reports

    best = models[best_m]
    test_mae, test_mse = median_errors(best, data.test)
    lines = [_provenance(data.name, cfg, {"grid": ",".join(map(str, grid))})]
    lines += [f"# config: {line}" for line in cfg.to_text().splitlines() if line]
    lines.append("m\tbest_epoch\tval_mae\tparams")
    for m in grid:
        lines.append(f"{m}\t{reports[m].best_epoch}\t{reports[m].best_val_mae!r}\t{param_count(models[m])}")
    lines += [
        f"selected_m = {best_m}",
        f"val_mae = {reports[best_m].best_val_mae!r}",
        f"test_mae = {test_mae!r}",
        f"test_mse = {test_mse!r}",
        f"params = {param_count(best)}",
        f"seed = {cfg.train.seed}",
    ]
    write_atomic(out / SUMMARY_FILE, "\n".join(lines) + "\n")
    print(f"selected M={best_m}: val MAE {reports[best_m].best_val_mae:.6f}, test MAE {test_mae:.6f}")
    return EXIT_OK


def _load_for_inference(args) -> tuple[QuantileLinearModel, RunConfig, PreparedData]:
    ckpt = Path(args.checkpoint)
    model = load_checkpoint(ckpt)
    cfg = parse_config(model.metadata.get("config", ""), source=f"{ckpt} (embedded config)")
    data = prepare_data(cfg, args.data)
    stats_path = Path(args.stats) if getattr(args, "stats", None) else ckpt.parent / model.metadata.get("stats_ref", STATS_FILE)
    stats = ChannelStats.load(stats_path)
    if stats.mean.shape[0] != data.train.n_channels:
        raise DataError(
            f"incompatible channel count: checkpoint stats have {stats.mean.shape[0]}, data has {data.train.n_channels}"
        )
    if model.per_channel_heads and model.n_channels != data.train.n_channels:
        raise DataError(f"incompatible channel count: model {model.n_channels}, data {data.train.n_channels}")
    if cfg.standardize and not (np.array_equal(stats.mean, data.stats.mean) and np.array_equal(stats.std, data.stats.std)):
        log.warning("stored standardizer differs from the one refitted on this file's train split; using stored")
        raw = [invert_standardizer(d, data.stats) for d in (data.train, data.val, data.test)]
        data.train, data.val, data.test = (apply_standardizer(d, stats) for d in raw)
    data.stats = stats
    return model, cfg, data


def cmd_evaluate(args) -> int:
    model, cfg, data = _load_for_inference(args)
    ds = data.val if args.split == "val" else data.test
    err_mae, err_mse = median_errors(model, ds)
    label = {"qd": "QDLinear", "qn": "QNLinear", "ql": "QLinear"}[model.variant]
    print(report_header())
    print(report_row(dataset=data.name, split=args.split, model=label, lookback=model.lookback,
                     horizon=model.horizon, m=model.slots.m, mae=err_mae, mse=err_mse,
                     params=param_count(model), seed=cfg.train.seed))
    if args.levels:
        levels = [float(v) for v in args.levels.split(",")]
        w = all_windows(ds, model.lookback, model.horizon)
        pin = per_level_pinball(w.inputs, w.targets, model, levels)
        preds = quantile_forecasts(w.inputs, model, levels)
        tag = " (extrapolated: per-slot embeddings)" if levels_are_extrapolated(model) else ""
        print(f"level\tpinball\tcoverage{tag}")
        for lv in levels:
            print(f"{lv}\t{pin[lv]!r}\t{coverage(w.targets, preds[lv])!r}")
    return EXIT_OK


def cmd_forecast(args) -> int:
    model, cfg, data = _load_for_inference(args)
    ds = data.test
    starts = window_starts(ds, model.lookback, model.horizon)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    names = ds.channel_names
    cols = ["window_start"] + [f"{c}@h{h + 1}" for h in range(model.horizon) for c in names]
    lines = [_provenance(data.name, cfg, {"split": "test", "scale": "original"}), ",".join(cols)]
    for i in range(0, len(starts), 1024):
        batch = gather_windows(ds, starts[i:i + 1024], model.lookback, model.horizon)
        pred = forecast_part(predict_level(batch.inputs, model, 0.5), model)
        pred = pred * data.stats.std + data.stats.mean
        for s, row in zip(batch.window_start_indices, pred):
            lines.append(",".join([str(ds.offset + s)] + [repr(float(v)) for v in row.reshape(-1)]))
    write_atomic(out, "\n".join(lines) + "\n")
    print(f"wrote {len(starts)} forecast rows to {out}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = resolve_config(args)
    if args.split:
        cfg = cfg.with_overrides(split=args.split)
    data = prepare_data(cfg, args.data)
    t = cfg.train
    w = all_windows(data.test, t.lookback, t.horizon)
    pred = repeat_baseline(w.inputs, t.horizon)
    print(report_header())
    print(report_row(dataset=data.name, split="test", model="Repeat", lookback=t.lookback,
                     horizon=t.horizon, m=0, mae=mae(w.targets, pred), mse=mse(w.targets, pred),
                     params=0, seed="-"))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qlinear", description="Implicit multi-quantile linear forecasting.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def run_options(p, need_out=True):
        p.add_argument("--config", help="INI config file; defaults apply when omitted")
        p.add_argument("--data", required=True, help="CSV dataset")
        if need_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--variant", choices=["qd", "qn", "ql"])
        p.add_argument("--horizon", type=int)
        p.add_argument("--lookback", type=int)
        p.add_argument("--m", type=int, help="number of quantile slots")

    p = sub.add_parser("train", help="train one model")
    run_options(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gridsearch", help="train one model per M and select on validation MAE")
    run_options(p)
    p.add_argument("--jobs", type=int, help="worker processes (overrides [gridsearch] jobs)")
    p.set_defaults(func=cmd_gridsearch)

    for name, func, help_ in (("evaluate", cmd_evaluate, "print median-level metrics"),
                              ("forecast", cmd_forecast, "write median forecasts for test windows")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--stats", help="standardizer file (default: the one referenced by the checkpoint)")
        if name == "evaluate":
            p.add_argument("--split", choices=["val", "test"], default="test")
            p.add_argument("--levels", help="comma-separated levels for pinball/coverage diagnostics")
        else:
            p.add_argument("--out", required=True, help="output CSV")
        p.set_defaults(func=func)

    p = sub.add_parser("baseline", help="Repeat-last-value baseline on the test split")
    run_options(p, need_out=False)
    p.add_argument("--split", help="split ratios such as 7:1:2 (default by dataset name)")
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataError, CheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
