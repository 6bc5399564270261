"""Command-line front end: gen | train | infer | refine | eval.

Every command is deterministic given its flags plus ``--seed``. Exit codes:
0 success, 2 I/O failure (also argparse usage errors), 3 no usable input
data, 4 invalid or inconsistent configuration, 5 malformed input file.

Config files are flat ``key=value`` text ('#' starts a comment). Keys are
namespaced by section: ``scene.*`` (gen), ``model.*`` / ``train.*`` /
``weights.*`` (train, infer), ``noise.*`` (train, infer). Flags override the
file; seeds come only from ``--seed``. Output files are written atomically
(temp file in the target directory, then rename).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .decoder import ModelConfig, PointLaneModel, bev_raster, predictions_to_detections
from .errors import ConfigError, EmptyDataError, ParseError
from .metrics import (
    GAP_HIST_EDGES,
    MetricReport,
    aggregate_curves,
    collect_curves,
)
from .refine import RefinementConfig, apply_refinement, refine
from .scene import (
    NoiseSpec,
    SceneConfig,
    detections_from_dict,
    detections_to_dict,
    generate_scene,
    ground_truth_detections,
    perturb_scene,
    scene_from_dict,
    scene_to_dict,
)
from .training import LossWeights, TrainConfig, fit, write_history_csv

EXIT_OK = 0
EXIT_IO = 2
EXIT_EMPTY = 3
EXIT_CONFIG = 4
EXIT_PARSE = 5

METRIC_COLS = ("det_p", "det_l", "det_t", "top_ll", "top_lt", "ols")


# -- small file helpers ---------------------------------------------------------


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _dump_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def _load_json(path: Path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _pmap(fn, items, jobs: int) -> list:
    """Apply fn over items, optionally threaded; results keep input order."""
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


# -- config files ---------------------------------------------------------------


def read_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def _coerce(raw: str, template):
    if isinstance(template, bool):
        low = raw.lower()
        if low in ("1", "true", "yes"):
            return True
        if low in ("0", "false", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(template, int):
        return int(raw)
    if isinstance(template, float):
        return float(raw)
    if isinstance(template, tuple):
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) != len(template):
            raise ValueError(f"expected {len(template)} comma-separated values")
        return tuple(_coerce(p, template[i]) for i, p in enumerate(parts))
    return raw


def _apply_section(obj, prefix: str, cfg: dict[str, str], used: set[str], skip=()):
    """Overwrite scalar dataclass fields of obj from '<prefix>.<field>' keys."""
    for f in dataclasses.fields(obj):
        if f.name in skip:
            continue
        cur = getattr(obj, f.name)
        if not isinstance(cur, (bool, int, float, str, tuple)):
            continue
        key = f"{prefix}.{f.name}"
        if key in cfg:
            try:
                setattr(obj, f.name, _coerce(cfg[key], cur))
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from exc
            used.add(key)
    return obj


def _finish_config(cfg: dict[str, str], used: set[str]) -> None:
    unknown = sorted(set(cfg) - used)
    if unknown:
        raise ConfigError("unknown config key(s): " + ", ".join(unknown))


def _noise_from_config(cfg: dict[str, str], used: set[str]) -> NoiseSpec | None:
    if not any(k.startswith("noise.") for k in cfg):
        return None
    spec = _apply_section(NoiseSpec(), "noise", cfg, used)
    spec.validate()
    return spec


# -- scene / prediction file discovery ------------------------------------------


def _scene_files(directory: str) -> list[Path]:
    return sorted(Path(directory).glob("scene_*.json"))


def _pred_name(scene_path: Path) -> str:
    stem = scene_path.stem
    if stem.startswith("scene_"):
        stem = stem[len("scene_") :]
    return f"pred_{stem}.json"


def _load_scene(path: Path):
    return scene_from_dict(_load_json(path))


def _load_dets(path: Path):
    return detections_from_dict(_load_json(path))


# -- gen ------------------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg_file = read_config_file(args.config) if args.config else {}
    used: set[str] = set()
    scfg = _apply_section(SceneConfig(), "scene", cfg_file, used)
    _finish_config(cfg_file, used)
    scfg.validate()
    if args.n < 0:
        raise ConfigError("--n must be non-negative")
    out = Path(args.out)
    for i in range(args.n):
        scene = generate_scene(args.seed + i, scfg)
        _write_atomic(out / f"scene_{args.seed}_{i}.json", _dump_json(scene_to_dict(scene)))
    print(f"wrote {args.n} scene(s) to {out}")
    return EXIT_OK


# -- train ----------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg_file = read_config_file(args.config) if args.config else {}
    used: set[str] = set()
    mcfg = _apply_section(ModelConfig(), "model", cfg_file, used)
    tcfg = _apply_section(TrainConfig(seed=args.seed), "train", cfg_file, used, skip=("seed",))
    tcfg.weights = _apply_section(LossWeights(), "weights", cfg_file, used)
    tcfg.stub_noise = _noise_from_config(cfg_file, used)
    _finish_config(cfg_file, used)
    mcfg.validate()
    tcfg.validate()

    paths = _scene_files(args.scenes)
    if not paths:
        raise EmptyDataError(f"no scene files in {args.scenes}")
    scenes = [_load_scene(p) for p in paths]

    model = PointLaneModel(mcfg, seed=args.seed)
    result = fit(model, scenes, tcfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "checkpoint.json"
    fd, tmp = tempfile.mkstemp(dir=out, prefix=ckpt.name, suffix=".tmp")
    os.close(fd)
    try:
        model.save(tmp)
        os.replace(tmp, ckpt)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
    hist = out / "history.csv"
    fd, tmp = tempfile.mkstemp(dir=out, prefix=hist.name, suffix=".tmp")
    os.close(fd)
    try:
        write_history_csv(result.history, tmp)
        os.replace(tmp, hist)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
    if result.diverged:
        print("warning: training diverged; parameters rolled back", file=sys.stderr)
    first = result.history[0]["total"]
    last = result.history[-1]["total"]
    print(
        f"trained on {len(scenes)} scene(s) for {len(result.history)} iteration(s);"
        f" total loss {first:.4f} -> {last:.4f}"
    )
    print(f"wrote {ckpt} and {hist}")
    return EXIT_OK


# -- infer ----------------------------------------------------------------------


def cmd_infer(args) -> int:
    cfg_file = read_config_file(args.config) if args.config else {}
    used: set[str] = set()
    noise = _noise_from_config(cfg_file, used)
    paths = _scene_files(args.scenes)
    if not paths:
        raise EmptyDataError(f"no scene files in {args.scenes}")
    out = Path(args.out)

    if args.surrogate:
        if args.checkpoint:
            raise ConfigError("--surrogate and --checkpoint are mutually exclusive")
        if args.all_layers:
            raise ConfigError("--all-layers needs a model checkpoint")
        _finish_config(cfg_file, used)

        def work(item):
            i, path = item
            scene = _load_scene(path)
            if noise is None:
                dets = ground_truth_detections(scene)
            else:
                dets = perturb_scene(scene, noise, seed=args.seed + i)
            return [(out / _pred_name(path), _dump_json(detections_to_dict(dets)))]

    else:
        if not args.checkpoint:
            raise ConfigError("infer needs --checkpoint PATH or --surrogate")
        model = PointLaneModel.load(args.checkpoint)
        requested = _apply_section(
            dataclasses.replace(model.config), "model", cfg_file, used
        )
        if requested != model.config:
            mismatched = [
                f.name
                for f in dataclasses.fields(ModelConfig)
                if getattr(requested, f.name) != getattr(model.config, f.name)
            ]
            raise ConfigError(
                "checkpoint/config mismatch on: " + ", ".join(mismatched)
            )
        _finish_config(cfg_file, used)

        def work(item):
            i, path = item
            scene = _load_scene(path)
            raster = bev_raster(scene, model.config.bev_shape, model.config.extent)
            f_bev = model.lift_raster(raster)
            q_t_hat, boxes, box_scores = model.traffic_stub(
                scene, noise=noise, seed=args.seed + i
            )
            preds = model.forward(f_bev, q_t_hat)
            files = []
            if args.all_layers:
                stem = _pred_name(path)[: -len(".json")]
                for li, layer_preds in enumerate(preds):
                    dets_li = predictions_to_detections(layer_preds, boxes, box_scores)
                    files.append(
                        (out / f"{stem}_layer{li}.json", _dump_json(detections_to_dict(dets_li)))
                    )
            dets = predictions_to_detections(preds[-1], boxes, box_scores)
            files.append((out / _pred_name(path), _dump_json(detections_to_dict(dets))))
            return files

    results = _pmap(work, list(enumerate(paths)), args.jobs)
    n_files = 0
    for files in results:
        for path, text in files:
            _write_atomic(path, text)
            n_files += 1
    mode = "surrogate" if args.surrogate else "model"
    print(f"wrote {n_files} prediction file(s) to {out} ({mode} mode)")
    return EXIT_OK


# -- refine ---------------------------------------------------------------------


def cmd_refine(args) -> int:
    cfg = RefinementConfig(tau_p=args.tau_p, tau_l=args.tau_l, delta=args.delta)
    cfg.validate()
    paths = sorted(Path(args.preds).glob("pred_*.json"))
    if not paths:
        raise EmptyDataError(f"no prediction files in {args.preds}")
    out = Path(args.out)

    def work(path: Path):
        dets = _load_dets(path)
        refined_lanes, trace = refine(dets, cfg)
        refined = apply_refinement(dets, refined_lanes)
        suffix = path.stem[len("pred_") :]
        return (
            (path.name, _dump_json(detections_to_dict(refined))),
            (f"trace_{suffix}.json", _dump_json(trace.to_dict())),
            len(trace.clusters),
            float(trace.moved_distances().sum()),
        )

    results = _pmap(work, paths, args.jobs)
    n_clusters = 0
    total_moved = 0.0
    for pred_file, trace_file, clusters, moved in results:
        _write_atomic(out / pred_file[0], pred_file[1])
        _write_atomic(out / trace_file[0], trace_file[1])
        n_clusters += clusters
        total_moved += moved
    print(
        f"refined {len(paths)} file(s): {n_clusters} cluster(s),"
        f" total endpoint displacement {total_moved:.3f} m"
    )
    return EXIT_OK


# -- eval -----------------------------------------------------------------------


def _evaluate_dir(scene_paths: list[Path], preds_dir: Path, jobs: int):
    """Returns (aggregate report, per-scene reports, pooled curves)."""

    def work(scene_path: Path):
        pred_path = preds_dir / _pred_name(scene_path)
        if not pred_path.exists():
            raise FileNotFoundError(f"missing predictions for {scene_path.name}: {pred_path}")
        scene = _load_scene(scene_path)
        dets = _load_dets(pred_path)
        return collect_curves(scene, dets)

    curves = _pmap(work, scene_paths, jobs)
    aggregate = aggregate_curves(curves)
    per_scene = [aggregate_curves([c]) for c in curves]
    return aggregate, per_scene, curves


def _report_csv(scene_paths: list[Path], per_scene: list[MetricReport], aggregate: MetricReport) -> str:
    cols = ["scene", *METRIC_COLS, "endpoint_gap_mean", "endpoint_gap_max"]
    lines = [",".join(cols)]
    for path, rep in zip(scene_paths, per_scene):
        d = rep.to_dict()
        lines.append(",".join([path.stem] + [repr(d[c]) for c in cols[1:]]))
    d = aggregate.to_dict()
    lines.append(",".join(["aggregate"] + [repr(d[c]) for c in cols[1:]]))
    return "\n".join(lines) + "\n"


def _summary_table(reports: dict[str, MetricReport]) -> str:
    head = f"{'':<12}" + "".join(f"{c.upper():>8}" for c in METRIC_COLS)
    lines = [head]
    for name, rep in reports.items():
        d = rep.to_dict()
        lines.append(f"{name:<12}" + "".join(f"{d[c]:>8.1f}" for c in METRIC_COLS))
    return "\n".join(lines)


def _pr_points(scores: np.ndarray, flags: np.ndarray, num_gt: int):
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(flags[order].astype(np.float64))
    precision = tp / np.arange(1, len(tp) + 1)
    recall = tp / num_gt if num_gt else np.zeros_like(tp)
    return recall, precision


def _svg_line_plot(series: list[tuple[str, str, np.ndarray, np.ndarray]], title: str) -> str:
    """Fixed-size SVG with unit axes; series are (label, color, x, y)."""
    w, h, pad = 420, 320, 40
    sx = w - 2 * pad
    sy = h - 2 * pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="{pad}" y="{pad}" width="{sx}" height="{sy}" fill="none" stroke="#444"/>',
        f'<text x="{w // 2}" y="20" text-anchor="middle" font-size="13">{title}</text>',
    ]
    for li, (label, color, xs, ys) in enumerate(series):
        if len(xs):
            pts = " ".join(
                f"{pad + float(x) * sx:.2f},{h - pad - float(y) * sy:.2f}"
                for x, y in zip(xs, ys)
            )
            parts.append(
                f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>'
            )
        parts.append(
            f'<text x="{pad + 6}" y="{pad + 16 + 14 * li}" font-size="11"'
            f' fill="{color}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _svg_histogram(counts: np.ndarray, edges: np.ndarray, title: str) -> str:
    w, h, pad = 420, 320, 40
    sx = w - 2 * pad
    sy = h - 2 * pad
    top = max(int(counts.max()), 1) if len(counts) else 1
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="{pad}" y="{pad}" width="{sx}" height="{sy}" fill="none" stroke="#444"/>',
        f'<text x="{w // 2}" y="20" text-anchor="middle" font-size="13">{title}</text>',
        f'<text x="{pad}" y="{h - 10}" font-size="11">{edges[0]:.1f} m</text>',
        f'<text x="{w - pad}" y="{h - 10}" text-anchor="end" font-size="11">{edges[-1]:.1f} m</text>',
        f'<text x="{pad - 4}" y="{pad + 4}" text-anchor="end" font-size="11">{top}</text>',
    ]
    n = len(counts)
    for i, c in enumerate(counts):
        bh = sy * float(c) / top
        x0 = pad + sx * i / n
        parts.append(
            f'<rect x="{x0:.2f}" y="{h - pad - bh:.2f}" width="{sx / n - 2:.2f}"'
            f' height="{bh:.2f}" fill="#4878a8"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _write_plots(out: Path, curves) -> list[Path]:
    colors = ("#1f77b4", "#ff7f0e", "#2ca02c")
    series = []
    for color, threshold in zip(colors, sorted(curves[0].lane)):
        scores = np.concatenate([c.lane[threshold][0] for c in curves])
        flags = np.concatenate([c.lane[threshold][1] for c in curves])
        num_gt = sum(c.n_gt_lanes for c in curves)
        recall, precision = _pr_points(scores, flags, num_gt)
        series.append((f"lanes @ {threshold:.0f} m", color, recall, precision))
    pr_path = out / "pr_curves.svg"
    _write_atomic(pr_path, _svg_line_plot(series, "lane precision-recall"))

    gaps = np.concatenate([c.gaps for c in curves]) if curves else np.zeros(0)
    if len(gaps):
        counts, _ = np.histogram(np.clip(gaps, 0.0, GAP_HIST_EDGES[-1]), bins=GAP_HIST_EDGES)
    else:
        counts = np.zeros(len(GAP_HIST_EDGES) - 1, dtype=np.int64)
    hist_path = out / "gap_hist.svg"
    _write_atomic(hist_path, _svg_histogram(counts, GAP_HIST_EDGES, "junction endpoint gaps"))
    return [pr_path, hist_path]


def cmd_eval(args) -> int:
    scene_paths = _scene_files(args.scenes)
    if not scene_paths:
        raise EmptyDataError(f"no scene files in {args.scenes}")
    out = Path(args.out)

    aggregate, per_scene, curves = _evaluate_dir(scene_paths, Path(args.preds), args.jobs)
    _write_atomic(out / "report.json", _dump_json(aggregate.to_dict()))
    _write_atomic(out / "report.csv", _report_csv(scene_paths, per_scene, aggregate))

    reports = {"predictions": aggregate}
    if args.compare:
        other_agg, other_scene, _ = _evaluate_dir(scene_paths, Path(args.compare), args.jobs)
        reports["compare"] = other_agg
        lines = ["metric,predictions,compare,delta"]
        a, b = aggregate.to_dict(), other_agg.to_dict()
        for c in METRIC_COLS:
            lines.append(f"{c},{a[c]!r},{b[c]!r},{b[c] - a[c]!r}")
        _write_atomic(out / "compare.csv", "\n".join(lines) + "\n")

    if args.plots:
        _write_plots(out, curves)

    print(_summary_table(reports))
    if aggregate.flags:
        print("flags: " + ", ".join(aggregate.flags))
    print(f"wrote reports to {out}")
    return EXIT_OK


# -- entry point ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for per-scene work")
    common.add_argument("--out", required=True, help="output directory")

    ap = argparse.ArgumentParser(
        prog="lanetopo",
        description="desk-scale lane topology toolkit: synthesize, train, refine, evaluate",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate synthetic scenes")
    p.add_argument("--n", type=int, required=True, help="number of scenes")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="fit a model on scene files")
    p.add_argument("--scenes", required=True, help="directory of scene_*.json")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="write predictions per scene")
    p.add_argument("--scenes", required=True, help="directory of scene_*.json")
    p.add_argument("--checkpoint", help="model checkpoint JSON")
    p.add_argument(
        "--surrogate",
        action="store_true",
        help="skip the model: emit ground truth as predictions,"
        " perturbed when the config sets noise.* keys",
    )
    p.add_argument(
        "--all-layers", action="store_true", help="also dump every decoder layer's predictions"
    )
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("refine", parents=[common], help="snap clustered lane endpoints")
    p.add_argument("--preds", required=True, help="directory of pred_*.json")
    p.add_argument("--tau-p", type=float, default=0.3, help="point score threshold")
    p.add_argument("--tau-l", type=float, default=0.3, help="lane score threshold")
    p.add_argument("--delta", type=float, default=1.5, help="cluster radius in meters")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", parents=[common], help="score predictions against scenes")
    p.add_argument("--preds", required=True, help="directory of pred_*.json")
    p.add_argument("--scenes", required=True, help="directory of scene_*.json")
    p.add_argument("--compare", help="second predictions directory to diff against")
    p.add_argument("--plots", action="store_true", help="write SVG plots")
    p.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EmptyDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
