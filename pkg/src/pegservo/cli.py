"""Command line front end.

Every subcommand writes a manifest.json into --out before doing any work,
echoing the resolved configuration; artifacts land next to it. Domain
errors exit 1 with the error class name on stderr; usage errors exit 2.

PEGSERVO_OUT and PEGSERVO_JOBS provide defaults for --out and --jobs; an
explicit flag always wins. No other environment variables are consulted.
"""

import argparse
import datetime
import json
import os
import sys
from dataclasses import asdict, fields, replace

import numpy as np

from . import __version__
from .bench import (MODE_VS, BenchConfig, BenchRow, build_report, emit_report,
                    run_benchmark)
from .errors import InvalidConfig, IoError, PegServoError
from .perception import (TrainConfig, evaluate, load_dataset, load_model,
                         save_dataset, save_model, train)
from .pipeline import (CollectionConfig, DeploymentGate, collect_dataset,
                       configure, split_by_insertion)
from .search import generate_pattern, write_pattern_csv
from .servoing import servo_config_for, visual_servo, write_trace_csv
from .sim import (COMPONENT_STYLES, TimingModel, WorldConfig,
                  load_config_file, move_tcp, new_world, render,
                  timing_from_dict, timing_to_dict, true_inplane_error,
                  world_from_dict, world_to_dict, write_pgm)

_CONFIG_SECTIONS = {"world", "timing", "collection", "train", "bench", "gate"}


def _load_sections(path) -> dict:
    if path is None:
        return {}
    raw = load_config_file(path)
    unknown = set(raw) - _CONFIG_SECTIONS
    if unknown:
        raise InvalidConfig(f"unknown config sections: {sorted(unknown)}; "
                            f"expected a subset of {sorted(_CONFIG_SECTIONS)}")
    return raw


def _from_section(cls, section: dict, convert=()):
    known = {f.name for f in fields(cls)}
    unknown = set(section) - known
    if unknown:
        raise InvalidConfig(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kw = dict(section)
    for key in convert:
        if key in kw and isinstance(kw[key], list):
            kw[key] = tuple(kw[key])
    return cls(**kw)


def _world_config(sections, seed=None, style=None) -> WorldConfig:
    cfg = world_from_dict(sections.get("world", {}))
    kw = {}
    if seed is not None:
        kw["seed"] = seed
    if style is not None:
        kw["component_style"] = style
    return replace(cfg, **kw) if kw else cfg


def _timing(sections) -> TimingModel:
    return timing_from_dict(sections.get("timing", {}))


def _bench_config(sections) -> BenchConfig:
    section = dict(sections.get("bench", {}))
    section.pop("timing", None)
    section.pop("world_template", None)
    cfg = _from_section(BenchConfig, section,
                        convert=("component_styles", "modes"))
    return replace(cfg, timing=_timing(sections),
                   world_template=_world_config(sections))


def _write_manifest(out_dir, subcommand, ns, config_echo, outputs) -> None:
    os.makedirs(out_dir, exist_ok=True)
    args = {k: v for k, v in vars(ns).items() if k != "func"}
    manifest = {
        "subcommand": subcommand,
        "version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "args": args,
        "config": config_echo,
        "outputs": sorted(outputs),
    }
    try:
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _model_dirs(models_dir):
    """cam<j> subdirectories in index order."""
    try:
        names = sorted(n for n in os.listdir(models_dir)
                       if n.startswith("cam") and n[3:].isdigit())
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if not names:
        raise IoError(f"no cam*/ model directories under {models_dir}")
    names.sort(key=lambda n: int(n[3:]))
    return [os.path.join(models_dir, n) for n in names]


def cmd_pattern(ns) -> int:
    echo = {"tolerance": ns.tolerance, "max_radius": ns.max_radius}
    _write_manifest(ns.out, "pattern", ns, echo, ["pattern.csv"])
    pattern = generate_pattern(ns.tolerance, ns.max_radius)
    write_pattern_csv(pattern, os.path.join(ns.out, "pattern.csv"))
    print(f"pattern: {len(pattern)} offsets, spacing {pattern.spacing:.6f} mm "
          f"-> {ns.out}/pattern.csv")
    return 0


def cmd_simulate(ns) -> int:
    sections = _load_sections(ns.config)
    wcfg = _world_config(sections, seed=ns.seed, style=ns.style)
    outputs = [f"cam{j}.pgm" for j in range(len(wcfg.cameras))] + ["scene.json"]
    _write_manifest(ns.out, "simulate", ns, {"world": world_to_dict(wcfg)}, outputs)
    world = new_world(wcfg)
    truth = {}
    for j in range(len(wcfg.cameras)):
        obs = render(world, j)
        write_pgm(obs.pixels, os.path.join(ns.out, f"cam{j}.pgm"))
        truth[str(j)] = obs.truth_y
    scene = {
        "tcp": [float(v) for v in world.tcp],
        "true_inplane_error_mm": true_inplane_error(world),
        "truth_y": truth,
        "component_style": wcfg.component_style,
        "seed": wcfg.seed,
    }
    with open(os.path.join(ns.out, "scene.json"), "w") as fh:
        json.dump(scene, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"simulate: {len(wcfg.cameras)} views, true error "
          f"{scene['true_inplane_error_mm']:.4f} mm -> {ns.out}")
    return 0


def cmd_collect(ns) -> int:
    sections = _load_sections(ns.config)
    ccfg = _from_section(CollectionConfig, sections.get("collection", {}))
    template = _world_config(sections)
    echo = {"world": world_to_dict(template), "collection": asdict(ccfg),
            "seed_base": ns.seed}
    _write_manifest(ns.out, "collect", ns, echo, ["dataset/meta.json",
                                                  "dataset/images.bin"])
    pattern = generate_pattern(template.tolerance, ccfg.max_offset_mag)

    def factory(i):
        return new_world(replace(template, seed=ns.seed + i))

    data = collect_dataset(factory, ccfg, pattern)
    save_dataset(data, os.path.join(ns.out, "dataset"))
    print(f"collect: {len(data)} samples from {len(data.grouping)} insertions "
          f"-> {ns.out}/dataset")
    return 0


def cmd_train(ns) -> int:
    sections = _load_sections(ns.config)
    hyper = _from_section(TrainConfig, sections.get("train", {}),
                          convert=("hidden",))
    ccfg = _from_section(CollectionConfig, sections.get("collection", {}))
    echo = {"train": asdict(hyper), "train_insertions": ccfg.train_insertions}
    data = load_dataset(ns.data)
    n_cams = len(data.cameras)
    outputs = [f"models/cam{j}/model.json" for j in range(n_cams)] + ["report.json"]
    _write_manifest(ns.out, "train", ns, echo, outputs)
    train_ds, val_ds = split_by_insertion(data, ccfg.train_insertions, hyper.seed)
    report = {"per_camera": {}, "train_ids": sorted(train_ds.grouping),
              "val_ids": sorted(val_ds.grouping)}
    for j in range(n_cams):
        model, tr = train(train_ds.by_camera(j), val_ds.by_camera(j), hyper)
        save_model(model, os.path.join(ns.out, "models", f"cam{j}"))
        metrics = evaluate(model, val_ds.by_camera(j))
        report["per_camera"][str(j)] = {
            "epochs_run": tr.epochs_run, "best_val_loss": tr.best_val_loss,
            "stopped_early": tr.stopped_early, **metrics}
        print(f"train: cam{j} val mae {metrics['mae_mm']:.4f} mm "
              f"({tr.epochs_run} epochs)")
    with open(os.path.join(ns.out, "report.json"), "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_evaluate(ns) -> int:
    data = load_dataset(ns.data)
    model_dirs = _model_dirs(ns.models)
    _write_manifest(ns.out, "evaluate", ns, {}, ["metrics.json"])
    metrics = {}
    for j, mdir in enumerate(model_dirs):
        model = load_model(mdir)
        sub = data.by_camera(j)
        metrics[str(j)] = evaluate(model, sub)
        print(f"evaluate: cam{j} mae {metrics[str(j)]['mae_mm']:.4f} mm "
              f"over {metrics[str(j)]['n']} samples")
    with open(os.path.join(ns.out, "metrics.json"), "w") as fh:
        json.dump(metrics, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return 0


def cmd_servo(ns) -> int:
    sections = _load_sections(ns.config)
    wcfg = _world_config(sections, seed=ns.seed, style=ns.style)
    timing = _timing(sections)
    echo = {"world": world_to_dict(wcfg), "timing": timing_to_dict(timing),
            "n_iters": ns.n_iters, "error": ns.error}
    outputs = ["result.json"] + (["trace.csv"] if ns.trace else [])
    _write_manifest(ns.out, "servo", ns, echo, outputs)
    models = [load_model(d) for d in _model_dirs(ns.models)]
    if len(models) != len(wcfg.cameras):
        raise InvalidConfig(f"{len(models)} models for {len(wcfg.cameras)} cameras")
    world = new_world(wcfg)
    if ns.error:
        ang_rng = np.random.default_rng(np.random.SeedSequence([wcfg.seed, 99]))
        theta = ang_rng.uniform(0.0, 2.0 * np.pi)
        offset = ns.error * np.array([np.cos(theta), np.sin(theta)])
        move_tcp(world, world.tcp + world.basis @ offset)
    cfg = servo_config_for(world, tuple(models), n_iters=ns.n_iters,
                           timing=timing)
    trace = [] if ns.trace else None
    _, residuals = visual_servo(world, cfg, trace=trace)
    if ns.trace:
        write_trace_csv(trace, os.path.join(ns.out, "trace.csv"))
    result = {
        "residuals_mm": residuals,
        "final_error_mm": true_inplane_error(world),
        "elapsed_time_s": world.elapsed_time,
        "n_iters": ns.n_iters,
    }
    with open(os.path.join(ns.out, "result.json"), "w") as fh:
        json.dump(result, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"servo: residuals {['%.4f' % r for r in residuals]} mm, "
          f"time {world.elapsed_time:.3f} s")
    return 0


_BENCH_OUTPUTS = ["table.csv", "scatter.csv", "rows.csv", "summary.json",
                  "scatter.svg"]


def _bench_models(ns, cfg: BenchConfig, sections) -> dict:
    """Per-style camera model tuples: loaded from disk or trained in place."""
    if MODE_VS not in cfg.modes:
        return {}
    if ns.models is not None:
        out = {}
        for style in cfg.component_styles:
            sdir = os.path.join(ns.models, style)
            out[style] = tuple(load_model(d) for d in _model_dirs(sdir))
        return out
    ccfg = _from_section(CollectionConfig, sections.get("collection", {}))
    hyper = _from_section(TrainConfig, sections.get("train", {}),
                          convert=("hidden",))
    gate_sec = sections.get("gate", {})
    out = {}
    for style in cfg.component_styles:
        gate = DeploymentGate(**gate_sec) if gate_sec else DeploymentGate(
            max_val_mae_mm=cfg.world_template.tolerance / 2.0)

        def factory(i, style=style):
            return new_world(replace(cfg.world_template, component_style=style,
                                     seed=ns.train_seed + i))

        res = configure(factory, ccfg, hyper, gate)
        maes = {j: res.metrics[j]["mae_mm"] for j in sorted(res.metrics)}
        print(f"bench: {style} {res.decision} "
              f"(val mae mm {[round(maes[j], 4) for j in sorted(maes)]})")
        out[style] = tuple(res.models[j] for j in sorted(res.models))
    return out


def cmd_bench(ns) -> int:
    sections = _load_sections(ns.config)
    cfg = _bench_config(sections)
    echo = {
        "bench": {"component_styles": list(cfg.component_styles),
                  "insertions_per_style_per_mode": cfg.insertions_per_style_per_mode,
                  "error_disc_radius": cfg.error_disc_radius,
                  "tolerance": cfg.tolerance, "n_iters": cfg.n_iters,
                  "seed": cfg.seed, "modes": list(cfg.modes)},
        "timing": timing_to_dict(cfg.timing),
        "world": world_to_dict(cfg.world_template),
    }
    _write_manifest(ns.out, "bench", ns, echo, _BENCH_OUTPUTS)
    models = _bench_models(ns, cfg, sections)
    report = run_benchmark(cfg, models, jobs=ns.jobs)
    emit_report(report, ns.out)
    print(f"bench: speedup {report.speedup:.2f}x, "
          f"success vs {report.success['vs']}/{report.success['vs_total']} "
          f"novs {report.success['novs']}/{report.success['novs_total']}, "
          f"direct {report.direct['vs']}, "
          f"mean post-servo error {report.mean_post_servo_retro_mm:.4f} mm "
          f"-> {ns.out}")
    return 0


_ROW_TYPES = (str, str, int, float, float, float, int,
              lambda v: bool(int(v)), float, lambda v: bool(int(v)))


def _read_rows_csv(path):
    try:
        with open(path) as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    except OSError as exc:
        raise IoError(str(exc)) from exc
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(_ROW_TYPES):
            raise InvalidConfig(f"bad rows.csv line: {ln!r}")
        rows.append(BenchRow(*[t(p) for t, p in zip(_ROW_TYPES, parts)]))
    return rows


def cmd_report(ns) -> int:
    rows = _read_rows_csv(ns.rows)
    _write_manifest(ns.out, "report", ns, {"rows": ns.rows}, _BENCH_OUTPUTS)
    report = build_report(rows)
    emit_report(report, ns.out)
    print(f"report: {len(rows)} rows, speedup {report.speedup:.2f}x -> {ns.out}")
    return 0


def _add_out(p, sub):
    p.add_argument("--out", default=os.environ.get("PEGSERVO_OUT",
                                                   os.path.join("runs", sub)),
                   help="output directory (env PEGSERVO_OUT)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pegservo",
        description="visual-servo peg insertion simulation toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p = subs.add_parser("pattern", help="write an isometric spiral search pattern")
    p.add_argument("--tolerance", type=float, default=0.1)
    p.add_argument("--max-radius", type=float, default=1.0)
    _add_out(p, "pattern")
    p.set_defaults(func=cmd_pattern)

    p = subs.add_parser("simulate", help="render one hidden-state scene")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--style", choices=COMPONENT_STYLES, default=None)
    _add_out(p, "simulate")
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("collect", help="autonomously collect a labeled dataset")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=1000,
                   help="world seed base; insertion i uses seed+i")
    _add_out(p, "collect")
    p.set_defaults(func=cmd_collect)

    p = subs.add_parser("train", help="train per-camera error regressors")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--config")
    _add_out(p, "train")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("evaluate", help="evaluate saved models on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--models", required=True)
    _add_out(p, "evaluate")
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("servo", help="run the servo loop on a fresh scene")
    p.add_argument("--models", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--style", choices=COMPONENT_STYLES, default=None)
    p.add_argument("--error", type=float, default=0.0,
                   help="extra in-plane start error magnitude (mm)")
    p.add_argument("--n-iters", type=int, default=3)
    p.add_argument("--trace", action="store_true",
                   help="write per-iteration trace.csv")
    _add_out(p, "servo")
    p.set_defaults(func=cmd_servo)

    p = subs.add_parser("bench", help="servo-vs-search benchmark grid")
    p.add_argument("--config", required=True)
    p.add_argument("--models", help="per-style model root; trains if omitted")
    p.add_argument("--train-seed", type=int, default=1000)
    p.add_argument("--jobs", type=int,
                   default=int(os.environ.get("PEGSERVO_JOBS", "1")),
                   help="episode workers (env PEGSERVO_JOBS); results "
                        "are identical for any value")
    _add_out(p, "bench")
    p.set_defaults(func=cmd_bench)

    p = subs.add_parser("report", help="re-emit report artifacts from rows.csv")
    p.add_argument("--rows", required=True)
    _add_out(p, "report")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    try:
        return ns.func(ns)
    except PegServoError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
