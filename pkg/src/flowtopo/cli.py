"""Command line front end: flowtopo train | eval | render | sweep.

Exit codes: 0 success, 2 configuration or usage error, 3 numeric failure
(including a training abort, whose last good checkpoint is still written),
4 file I/O or model-format error.
"""

import argparse
import concurrent.futures
import copy
import json
import multiprocessing
import os
import sys

import numpy as np

from .config import (
    build_model,
    build_task,
    config_hash,
    load_config,
    make_config,
    train_options,
)
from .datasets import ood_sample
from .errors import (
    ConfigError,
    InvalidInputError,
    ModelFormatError,
    NumericError,
    StateError,
    TrainingAborted,
    UsageError,
)
from .grids import render_acceptance_grid, render_density_grid
from .metrics import MetricReport, auroc, estimate_kld, ood_scores, tpr_at_fpr
from .rng import STREAM_DATA, STREAM_EVAL, STREAM_OOD, RngStream
from .serialize import atomic_write_bytes, atomic_write_text, load_model, save_model
from .training import train


def _history_path(model_path):
    return os.path.splitext(model_path)[0] + ".history.csv"


def _train_once(cfg, seed, model_path):
    """Sample data, build a model, train it, and write model + history.

    On a numeric abort the rolled-back checkpoint and the partial history are
    still written before TrainingAborted propagates.
    """
    task = build_task(cfg)
    u, labels = task.sample(cfg["dataset"]["n_train"], RngStream(seed, STREAM_DATA))
    model = build_model(cfg, seed)
    opts = train_options(cfg, seed)

    def persist(history, aborted_at=None):
        prov = {"steps": len(history), "config_hash": config_hash(cfg)}
        if aborted_at is not None:
            prov["aborted_at"] = aborted_at
        save_model(model, model_path, provenance=prov)
        atomic_write_text(_history_path(model_path), history.to_csv())

    try:
        model, history = train(model, u, labels, opts)
    except TrainingAborted as exc:
        persist(exc.history, aborted_at=exc.step)
        raise
    persist(history)
    return model, history


def _eval_once(cfg, model, seed):
    """Score one trained model on its task: KLD plus OOD separation."""
    task = build_task(cfg)
    ev = cfg["eval"]
    eval_rng = RngStream(seed, STREAM_EVAL)
    kld, kld_se = estimate_kld(model, task, ev["kld_samples"], eval_rng.child(0))
    n_ood = ev["ood"]["n"]
    id_u, _ = task.sample(n_ood, eval_rng.child(1))
    ood_u = ood_sample(ev["ood"]["kind"], n_ood, RngStream(seed, STREAM_OOD))
    scores_id = ood_scores(model, id_u)
    scores_ood = ood_scores(model, ood_u)
    return MetricReport(
        dataset=cfg["dataset"]["name"],
        flow=model.meta.get("flow", {}).get("kind", cfg["flow"]["kind"]),
        base=model.meta.get("base", {}).get("kind", cfg["base"]["kind"]),
        objective=model.meta.get("objective", cfg["train"]["objective"]),
        seed=int(seed),
        kld=float(kld),
        kld_se=float(kld_se),
        auroc=auroc(scores_id, scores_ood),
        tpr05=tpr_at_fpr(scores_id, scores_ood, 0.05),
        tpr10=tpr_at_fpr(scores_id, scores_ood, 0.10),
        tpr20=tpr_at_fpr(scores_id, scores_ood, 0.20),
    )


def _append_report(path, report):
    """Append one CSV row, writing the header first on a fresh file. The file
    is rewritten atomically so readers never see a partial row."""
    existing = ""
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            existing = fh.read()
    if not existing.strip():
        text = MetricReport.CSV_HEADER + "\n" + report.to_csv_row() + "\n"
    else:
        text = existing.rstrip("\n") + "\n" + report.to_csv_row() + "\n"
    atomic_write_text(path, text)


def _cmd_train(args):
    cfg = load_config(args.config)
    seed = cfg["seed"] if args.seed is None else args.seed
    model, history = _train_once(cfg, seed, args.out)
    last_loss = history.loss[-1] if len(history) else float("nan")
    line = f"saved {args.out}: {len(history)} steps, final loss {last_loss:.6g}"
    base = model.base
    if getattr(base, "z_value", None) is not None:
        zmin, zmax = float(np.min(base.z_value)), float(np.max(base.z_value))
        line += f", frozen Z in [{zmin:.6g}, {zmax:.6g}] from {base.z_samples} samples"
    print(line)
    return 0


def _cmd_eval(args):
    cfg = load_config(args.config)
    model = load_model(args.model)
    seed = cfg["seed"] if args.seed is None else args.seed
    report = _eval_once(cfg, model, seed)
    _append_report(args.out, report)
    print(
        f"{report.dataset}/{report.flow}/{report.base}/{report.objective}"
        f" seed {report.seed}: kld {report.kld:.6g} (se {report.kld_se:.3g}),"
        f" auroc {report.auroc:.4f}"
    )
    return 0


def _parse_bounds(text):
    parts = text.split(",")
    if len(parts) != 4:
        raise UsageError(f"bounds need four comma-separated numbers, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise UsageError(f"bounds need four comma-separated numbers, got {text!r}")


def _parse_resolution(text):
    parts = text.split(",")
    try:
        nums = [int(p) for p in parts]
    except ValueError:
        nums = []
    if len(nums) == 1:
        return nums[0]
    if len(nums) == 2:
        return (nums[0], nums[1])
    raise UsageError(f"resolution must be N or NX,NY, got {text!r}")


def _cmd_render(args):
    model = load_model(args.model)
    bounds = _parse_bounds(args.bounds)
    resolution = _parse_resolution(args.resolution)
    if args.mode == "density":
        grid = render_density_grid(model, bounds=bounds, resolution=resolution,
                                   y=args.label)
    else:
        label = 0 if args.label is None else args.label
        grid = render_acceptance_grid(model.base, label, bounds=bounds,
                                      resolution=resolution)
    atomic_write_bytes(args.out + ".pgm", grid.to_pgm_bytes())
    atomic_write_text(args.out + ".csv", grid.to_csv())
    print(f"wrote {args.out}.pgm and {args.out}.csv ({grid.nx}x{grid.ny})")
    return 0


def _load_sweep_spec(path):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("$", f"invalid JSON (byte offset {exc.pos}): {exc.msg}")
    if not isinstance(spec, dict):
        raise ConfigError("$", "sweep spec must be a JSON object")
    allowed = {"name", "base_config", "seeds", "cells"}
    for key in spec:
        if key not in allowed:
            raise ConfigError(str(key), "unknown field")
    seeds = spec.get("seeds", [0])
    if (not isinstance(seeds, list) or not seeds
            or any(isinstance(s, bool) or not isinstance(s, int) for s in seeds)):
        raise ConfigError("seeds", f"expected a non-empty list of integers, got {seeds!r}")
    cells = spec.get("cells")
    if not isinstance(cells, list) or not cells:
        raise ConfigError("cells", "expected a non-empty list of cells")
    base_config = spec.get("base_config", {})
    if not isinstance(base_config, dict):
        raise ConfigError("base_config", "expected an object")
    cell_keys = {"dataset", "flow", "base", "objective"}
    parsed = []
    for i, cell in enumerate(cells):
        if not isinstance(cell, dict):
            raise ConfigError(f"cells[{i}]", f"expected an object, got {cell!r}")
        for key in cell:
            if key not in cell_keys:
                raise ConfigError(f"cells[{i}].{key}", "unknown field")
        overrides = copy.deepcopy(base_config)
        if "dataset" in cell:
            overrides.setdefault("dataset", {})["name"] = cell["dataset"]
        if "flow" in cell:
            overrides.setdefault("flow", {})["kind"] = cell["flow"]
        if "base" in cell:
            overrides.setdefault("base", {})["kind"] = cell["base"]
        if "objective" in cell:
            overrides.setdefault("train", {})["objective"] = cell["objective"]
        try:
            cfg = make_config(overrides)
        except ConfigError as exc:
            raise ConfigError(f"cells[{i}].{exc.path}", exc.message) from exc
        parsed.append(cfg)
    return seeds, parsed


def _cell_tag(cfg, seed):
    return "_".join([
        cfg["dataset"]["name"], cfg["flow"]["kind"], cfg["base"]["kind"],
        cfg["train"]["objective"], f"s{seed}",
    ])


def _run_sweep_job(job):
    """One (cell, seed) unit of a sweep; returns (index, report | None, error)."""
    index, cfg, seed, out_dir = job
    tag = _cell_tag(cfg, seed)
    try:
        model, _ = _train_once(cfg, seed, os.path.join(out_dir, tag + ".model.json"))
        report = _eval_once(cfg, model, seed)
        return index, report, None
    except Exception as exc:  # keep the sweep going; the cell is reported failed
        return index, None, f"{type(exc).__name__}: {exc}"


def _pivot_table(cell_cfgs, seeds, reports):
    """Mean/sd of KLD per dataset x (flow, base, objective) column."""
    col_keys = []
    row_keys = []
    for cfg in cell_cfgs:
        col = (cfg["flow"]["kind"], cfg["base"]["kind"], cfg["train"]["objective"])
        if col not in col_keys:
            col_keys.append(col)
        row = cfg["dataset"]["name"]
        if row not in row_keys:
            row_keys.append(row)
    cells = {}
    for report in reports:
        key = (report.dataset, (report.flow, report.base, report.objective))
        cells.setdefault(key, []).append(report.kld)
    lines = ["dataset," + ",".join(
        f"{f}_{b}_{o}_mean,{f}_{b}_{o}_sd" for f, b, o in col_keys)]
    for row in row_keys:
        fields = [row]
        for col in col_keys:
            klds = cells.get((row, col), [])
            if not klds:
                fields += ["", ""]
                continue
            fields.append(f"{np.mean(klds):.9g}")
            fields.append(f"{np.std(klds, ddof=1):.9g}" if len(klds) > 1 else "")
        lines.append(",".join(fields))
    return "\n".join(lines) + "\n"


def _cmd_sweep(args):
    seeds, cell_cfgs = _load_sweep_spec(args.config)
    os.makedirs(args.out, exist_ok=True)
    jobs = []
    for seed in seeds:
        for cfg in cell_cfgs:
            jobs.append((len(jobs), cfg, int(seed), args.out))

    results = [None] * len(jobs)
    if args.jobs > 1:
        # fork keeps workers independent of the parent __main__ module
        method = "fork" if "fork" in multiprocessing.get_all_start_methods() else "spawn"
        ctx = multiprocessing.get_context(method)
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=args.jobs, mp_context=ctx
        ) as pool:
            for index, report, error in pool.map(_run_sweep_job, jobs):
                results[index] = (report, error)
    else:
        for job in jobs:
            index, report, error = _run_sweep_job(job)
            results[index] = (report, error)

    reports, failures = [], []
    for job, (report, error) in zip(jobs, results):
        _, cfg, seed, _ = job
        if error is None:
            reports.append(report)
        else:
            failures.append((_cell_tag(cfg, seed), error))

    lines = [MetricReport.CSV_HEADER] + [r.to_csv_row() for r in reports]
    atomic_write_text(os.path.join(args.out, "summary.csv"),
                      "\n".join(lines) + "\n")
    atomic_write_text(os.path.join(args.out, "table.csv"),
                      _pivot_table(cell_cfgs, seeds, reports))
    print(f"sweep finished: {len(reports)} of {len(jobs)} runs succeeded")
    for tag, error in failures:
        print(f"failed {tag}: {error}", file=sys.stderr)
    return 3 if failures else 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="flowtopo",
        description="Train, evaluate, and render normalizing-flow density models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", required=True, help="output model JSON path")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--model", required=True, help="trained model JSON")
    p.add_argument("--out", required=True, help="metrics CSV to append to")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("render", help="rasterize a density or acceptance map")
    p.add_argument("--model", required=True, help="trained model JSON")
    p.add_argument("--out", required=True, help="output path prefix (.pgm/.csv)")
    p.add_argument("--mode", choices=("density", "acceptance"), default="density")
    p.add_argument("--label", type=int, default=None,
                   help="class label (density: marginal when omitted)")
    p.add_argument("--resolution", default="201", help="grid size N or NX,NY")
    p.add_argument("--bounds", default="-3,3,-3,3", help="x0,x1,y0,y1")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("sweep", help="train and evaluate a grid of cells")
    p.add_argument("--config", required=True, help="sweep spec JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel workers")
    p.set_defaults(func=_cmd_sweep)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"flowtopo: config error: {exc}", file=sys.stderr)
        return 2
    except (InvalidInputError, UsageError, StateError) as exc:
        print(f"flowtopo: {exc}", file=sys.stderr)
        return 2
    except TrainingAborted as exc:
        print(f"flowtopo: training aborted at step {exc.step}: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"flowtopo: numeric failure: {exc}", file=sys.stderr)
        return 3
    except ModelFormatError as exc:
        print(f"flowtopo: bad model file: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"flowtopo: i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
