"""Command-line interface.

Subcommands: fit, predict, interval, adjust, simulate, compare, validate.
Errors exit nonzero and write ``error.json`` to the output directory.
"""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .config import build_config
from .data import clean
from .errors import PhotodegError, ValidationError
from .fitting import fit_categorical, fit_combined, init_from_categorical
from .path import TABLE4
from .prediction import (
    band_failure_times,
    calibrated_interval,
    estimate_group_effects,
    estimate_random_effect,
    predict_path,
    prediction_mse,
)
from .sim import WeatherSpec, simulate_accel, simulate_outdoor, simulate_weather, table2_design
from .weather import impute_covariates

log = logging.getLogger("photodeg")

EXIT_VALIDATION = 2
EXIT_FAILURE = 1


def _common(p):
    p.add_argument("--config", help="INI file with a [photodeg] section")
    p.add_argument("--out", help="output directory (default: $PHOTODEG_OUTPUT_DIR or ./photodeg_out)")
    p.add_argument("--seed", type=int)
    p.add_argument("--bin-min", dest="bin_min", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="photodeg", description="Accelerated photodegradation modelling")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the categorical and combined models")
    p.add_argument("data", help="directory with specimens.csv, measurements.csv, dosage.csv")
    p.add_argument("--model", choices=["A", "B", "C"])
    p.add_argument("--quad-order", dest="quad_order", type=int)
    p.add_argument("--floor", type=float)
    p.add_argument("--exclude", help="file of specimen ids to drop")
    p.add_argument("--n-starts", dest="n_starts", type=int)
    p.add_argument("--keep-all-cells", action="store_true", help="do not drop the 55 C / 75 %% RH cells")
    _common(p)

    for name, text in (("predict", "point predictions and failure times"), ("interval", "calibrated prediction bands"),
                       ("adjust", "predictions adjusted by early measurements")):  # fmt: skip
        p = sub.add_parser(name, help=text)
        p.add_argument("fit", help="combined fit JSON written by `fit`")
        p.add_argument("outdoor", help="directory with covariates_<id>.csv files")
        if name == "interval":
            p.add_argument("--B", dest="B", type=int)
            p.add_argument("--level", type=float)
            p.add_argument("--n-jobs", dest="n_jobs", type=int)
        _common(p)

    p = sub.add_parser("simulate", help="write synthetic accelerated and outdoor datasets")
    p.add_argument("--n-outdoor", type=int, default=8)
    p.add_argument("--days", type=int, default=120)
    p.add_argument("--sigma-v", type=float, default=0.1)
    p.add_argument("--sigma-eps", type=float, default=0.01)
    p.add_argument("--group-sd", type=float, default=0.0)
    _common(p)

    p = sub.add_parser("compare", help="AIC and prediction MSE table across fits")
    p.add_argument("fits", nargs="+", help="combined fit JSON files")
    p.add_argument("--outdoor", help="outdoor directory with outdoor_measurements.csv for MSE columns")
    _common(p)

    p = sub.add_parser("validate", help="check an accelerated or outdoor data directory")
    p.add_argument("path")
    p.add_argument("--floor", type=float)
    p.add_argument("--exclude")
    _common(p)
    return parser


def _flags(args):
    return {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}


def _meta(cfg, **extra):
    meta = cfg.as_dict()
    meta.update(extra)
    return meta


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_fit(args, cfg):
    out = cfg.output_dir
    ds = io.ingest_accel(args.data)
    exclusions = io.read_id_list(cfg.exclude) if cfg.exclude else ()
    ds = clean(ds, floor=cfg.floor, exclusions=exclusions)
    if len(ds) == 0:
        raise ValidationError("no specimens left after cleaning", args.data)
    meta = _meta(cfg, data=str(args.data))
    io.write_json(out / "cleaning.json", {"specimens": ds.cleaning}, meta)
    cat = fit_categorical(ds, n_starts=1, seed=cfg.seed)
    io.write_json(out / "categorical.json", cat.to_dict(), meta)
    (out / "categorical.txt").write_text(cat.report("categorical-effects model"))
    excluded = () if args.keep_all_cells else ((55.0, 75.0),)
    init = init_from_categorical(cat.params, ds.splits, [t for t, _ in excluded])
    quad = cfg.quad_order or None
    fit = fit_combined(ds, init=init, model_kind=cfg.model, quad_order=quad, exclude_cells=excluded,
                       n_starts=cfg.n_starts, seed=cfg.seed)  # fmt: skip
    name = f"fit_{cfg.model}"
    io.write_json(out / f"{name}.json", io.fit_document(fit), meta)
    (out / f"{name}.txt").write_text(fit.report(f"combined model {cfg.model}"))
    print(f"model {cfg.model}: loglik {fit.loglik:.6f}, {fit.n_params} parameters, AIC {fit.aic:.4f}")
    return 0


def _histories(outdoor):
    histories, meas = io.ingest_outdoor(outdoor)
    return {sid: impute_covariates(h) for sid, h in histories.items()}, meas


def cmd_predict(args, cfg):
    out = cfg.output_dir
    fit = io.load_fit(args.fit)
    histories, _ = _histories(args.outdoor)
    meta = _meta(cfg, fit=str(args.fit), outdoor=str(args.outdoor))
    failures = []
    for sid, h in histories.items():
        band = predict_path(h, fit.params, 0.0, bin_minutes=cfg.bin_min)
        io.emit_band(band, out / f"prediction_{sid}.csv", meta)
        failures.append(band_failure_times(band, cfg.threshold, sid))
    io.emit_failures(failures, out / "failures.csv", meta)
    print(f"wrote predictions for {len(histories)} specimens to {out}")
    return 0


def cmd_interval(args, cfg):
    out = cfg.output_dir
    fit = io.load_fit(args.fit)
    histories, _ = _histories(args.outdoor)
    meta = _meta(cfg, fit=str(args.fit), outdoor=str(args.outdoor))
    failures = []
    for sid, h in histories.items():
        band = calibrated_interval(h, fit, level=cfg.level, B=cfg.B, seed=cfg.seed, n_jobs=cfg.n_jobs,
                                   bin_minutes=cfg.bin_min)  # fmt: skip
        io.emit_band(band, out / f"interval_{sid}.csv", dict(meta, redraws=band.meta["redraws"]))
        failures.append(band_failure_times(band, cfg.threshold, sid))
    io.emit_failures(failures, out / "interval_failures.csv", meta)
    print(f"wrote {cfg.level:.0%} bands for {len(histories)} specimens to {out}")
    return 0


def _adjusted(fit, histories, meas, bin_min):
    """Per specimen: (times, measured, unadjusted, adjusted, v_hat)."""
    base = {}
    for sid, rec in meas.items():
        band = predict_path(histories[sid], fit.params, 0.0, bin_minutes=bin_min)
        base[sid] = (rec, band.point[band.at(rec.times)])
    out = {}
    if fit.model_kind == "C":
        groups = {}
        for sid, (rec, pred) in base.items():
            groups.setdefault(rec.group_id or sid, []).append((sid, rec.y, pred))
        effects = estimate_group_effects(
            {g: [(y, p) for _, y, p in items] for g, items in groups.items()},
            fit.params.sigma_u, fit.params.sigma_v, fit.params.sigma_eps,
        )  # fmt: skip
        for g, items in groups.items():
            u, ws = effects[g]
            for (sid, y, pred), w in zip(items, ws):
                out[sid] = (base[sid][0].times, y, pred, np.exp(u + w) * pred, u + w)
    else:
        for sid, (rec, pred) in base.items():
            v = estimate_random_effect(rec.y, pred) if fit.model_kind != "A" else 0.0
            out[sid] = (rec.times, rec.y, pred, np.exp(v) * pred, v)
    return out


def cmd_adjust(args, cfg):
    out = cfg.output_dir
    fit = io.load_fit(args.fit)
    histories, meas = _histories(args.outdoor)
    if not meas:
        raise ValidationError("outdoor_measurements.csv is required for adjustment", args.outdoor)
    meta = _meta(cfg, fit=str(args.fit), outdoor=str(args.outdoor))
    res = _adjusted(fit, histories, meas, cfg.bin_min)
    long_rows = []
    effects = []
    for sid, (t, y, pred, adj, v) in sorted(res.items()):
        effects.append([sid, v])
        for series, values in (("measured", y), ("predicted", pred), ("adjusted", adj)):
            long_rows += [[sid, float(ti), series, float(val)] for ti, val in zip(t, values)]
    io.emit_long(long_rows, out / "adjusted_long.csv", meta)
    io.write_csv(out / "random_effects.csv", ["specimen_id", "v_hat"], effects, meta)
    print(f"adjusted {len(res)} specimens; MSE {prediction_mse((r[1], r[2]) for r in res.values()):.6g} -> "
          f"{prediction_mse((r[1], r[3]) for r in res.values()):.6g}")  # fmt: skip
    return 0


def cmd_simulate(args, cfg):
    out = cfg.output_dir
    truth = TABLE4.with_(sigma_v=args.sigma_v, sigma_eps=args.sigma_eps)
    design = table2_design(sigma_v=args.sigma_v, sigma_eps=args.sigma_eps, sigma_group=args.group_sd, seed=cfg.seed)
    meta = _meta(cfg, sigma_v=args.sigma_v, sigma_eps=args.sigma_eps, group_sd=args.group_sd)
    io.emit_accel(simulate_accel(design, truth), out / "accel", meta)
    records = []
    per_group = 4
    for k in range(args.n_outdoor):
        g = k // per_group
        sid = f"G{g + 1}-{k % per_group + 1}"
        start = np.datetime64("2002-03-01") + np.timedelta64(45 * g, "D")
        spec = WeatherSpec(start=str(start), n_days=args.days, seed=cfg.seed, specimen_id=f"G{g + 1}")
        h = simulate_weather(spec)
        h = replace(h, specimen_id=sid)
        io.emit_covariates(h, out / "outdoor" / f"covariates_{sid}.csv", meta)
        sim = simulate_outdoor(h, truth, cfg.seed, bin_minutes=cfg.bin_min)
        records.append(io.OutdoorRecord(sid, f"G{g + 1}", sim.times, sim.y))
    io.emit_outdoor_measurements(records, out / "outdoor" / "outdoor_measurements.csv", meta)
    io.write_json(out / "truth.json", {"combined_params": truth.as_dict()}, meta)
    print(f"wrote {design.n_specimens} accelerated and {args.n_outdoor} outdoor specimens to {out}")
    return 0


def cmd_compare(args, cfg):
    out = cfg.output_dir
    fits = [io.load_fit(f) for f in args.fits]
    meta = _meta(cfg, fits=[str(f) for f in args.fits], outdoor=args.outdoor)
    mses = {}
    if args.outdoor:
        histories, meas = _histories(args.outdoor)
        if not meas:
            raise ValidationError("outdoor_measurements.csv is required for MSE columns", args.outdoor)
        for f in fits:
            res = _adjusted(f, histories, meas, cfg.bin_min)
            unadj = prediction_mse((r[1], r[2]) for r in res.values())
            adj = prediction_mse((r[1], r[3]) for r in res.values()) if f.model_kind != "A" else None
            mses[id(f)] = (unadj, adj)
    header = ["model", "loglik", "n_params", "aic", "mse_unadjusted", "mse_adjusted"]
    rows = []
    for f in fits:
        unadj, adj = mses.get(id(f), (None, None))
        rows.append([f.model_kind, f.loglik, f.n_params, f.aic, unadj, adj])
    io.write_csv(out / "compare.csv", header, rows, meta)
    lines = [f"{'model':<6}{'loglik':>14}{'params':>8}{'AIC':>16}{'MSE(1)':>12}{'MSE(2)':>12}"]
    for m, ll, k, a, u, d in rows:
        cell = lambda x: f"{x:>12.6f}" if x is not None else f"{'-':>12}"  # noqa: E731
        lines.append(f"{m:<6}{ll:>14.2f}{k:>8d}{a:>16.2f}{cell(u)}{cell(d)}")
    text = "\n".join(lines) + "\n"
    (out / "compare.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_validate(args, cfg):
    path = Path(args.path)
    if (path / "specimens.csv").exists():
        ds = io.ingest_accel(path)
        cleaned = clean(ds, floor=cfg.floor, exclusions=io.read_id_list(cfg.exclude) if cfg.exclude else ())
        print(json.dumps({"kind": "accelerated", "specimens": len(ds), "observations": ds.n_obs,
                          "retained_specimens": len(cleaned), "retained_observations": cleaned.n_obs}, sort_keys=True))  # fmt: skip
    else:
        histories, meas = io.ingest_outdoor(path)
        missing = {sid: h.missing_fraction() for sid, h in histories.items()}
        for h in histories.values():
            impute_covariates(h)
        print(json.dumps({"kind": "outdoor", "specimens": len(histories), "measured": len(meas),
                          "missing_fraction": missing}, sort_keys=True))  # fmt: skip
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "interval": cmd_interval,
    "adjust": cmd_adjust,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "validate": cmd_validate,
}


def _error_report(exc, out):
    doc = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("path", "line"):
        val = getattr(exc, attr, None)
        if val is not None:
            doc[attr] = str(val) if attr == "path" else val
    text = json.dumps(doc, sort_keys=True)
    print(text, file=sys.stderr)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(text + "\n")
    except OSError:
        pass


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = Path(args.out) if getattr(args, "out", None) else None
    try:
        cfg = build_config(args.command, _flags(args), args.config)
        out = cfg.output_dir
        return COMMANDS[args.command](args, cfg)
    except ValidationError as exc:
        _error_report(exc, out or Path("photodeg_out"))
        return EXIT_VALIDATION
    except PhotodegError as exc:
        _error_report(exc, out or Path("photodeg_out"))
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
