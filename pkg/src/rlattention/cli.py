"""Command-line interface.

Exit codes: 0 success, 2 validation error (bad arguments, configuration or
file format), 3 data error (missing or inconsistent data).

The dataset root defaults to ``$RLATTENTION_DATA_ROOT`` when ``--data-root``
is omitted.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import harness
from .baselines import FlowConfig, IttiKochConfig
from .errors import AttentionError, DataError
from .gazeref import GazeMapConfig
from .imaging import Rect
from .metrics import MetricConfig
from .netforward import Network, atari_policy_spec, gaze_network_spec, random_weights
from .perturbsal import PerturbationConfig

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DATA = 3

log = logging.getLogger("rlattention")


def _data_root(args) -> Path:
    root = args.data_root or os.environ.get(harness.DATA_ROOT_ENV)
    if not root:
        raise DataError(f"no data root: pass --data-root or set {harness.DATA_ROOT_ENV}")
    return Path(root)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dump(obj) -> str:
    return json.dumps(harness._nan_to_none(obj), indent=2, sort_keys=True) + "\n"


def _size(text: str) -> tuple:
    h, w = (int(v) for v in text.lower().split("x"))
    return (h, w)


# --------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> int:
    catalog = harness.load_catalog(_data_root(args))
    summary = []
    for name, src in catalog.items():
        if isinstance(src, harness.EpisodeLog):
            summary.append({
                "episode": name,
                "frames": len(src),
                "gaze_frames": sum(1 for r in src.rows if r.gaze),
                "dropped_gaze_points": src.dropped_gaze,
                "life_losses": len(harness.life_loss_events(src)),
                **src.meta(),
            })
        else:
            summary.append({"archive": name, "frames": len(src.archive) if src.archive else 0, "requested": len(src.requested)})
    _emit(_dump({"sources": summary}), args.out)
    return EXIT_OK


def cmd_build_set(args) -> int:
    root = _data_root(args)
    if args.kind == "unseen":
        image_set = harness.ingest_unseen_set(root, args.n)
    else:
        episodes = harness.ingest_dataset(root)
        if args.kind == "standard":
            if args.episode:
                matches = [ep for ep in episodes if ep.name == args.episode]
                if not matches:
                    raise DataError(f"no episode named {args.episode!r}")
                ep = matches[0]
            elif len(episodes) == 1:
                ep = episodes[0]
            else:
                raise DataError(f"{len(episodes)} episodes found; choose one with --episode")
            image_set = harness.build_standard_set(ep, args.n)
        else:
            image_set = harness.build_failure_set(episodes, args.n, args.lookback)
    _emit(_dump(image_set.to_json()), args.out)
    return EXIT_OK


def _load_set(args):
    return harness.ImageSet.load(args.set), harness.load_catalog(_data_root(args))


def _save_maps(args, image_set, maps, meta) -> int:
    harness.save_map_bundle(args.out, image_set.members, maps, meta)
    missing = sum(m is None for m in maps)
    if missing:
        log.warning("%d of %d maps unavailable", missing, len(maps))
    return EXIT_OK


def cmd_extract(args) -> int:
    image_set, catalog = _load_set(args)
    net = Network.load(args.net)
    cfg = PerturbationConfig(args.mask_sigma, args.blur_sigma, args.stride, not args.no_upsample, args.frames)
    size = net.spec.input_shape[1:]
    maps = harness.extract_set_maps(net, catalog, image_set, cfg, size)
    meta = {"kind": "perturbation", "net": str(args.net), "config": cfg.__dict__, "image_set": image_set.kind}
    return _save_maps(args, image_set, maps, meta)


def cmd_predict_gaze(args) -> int:
    image_set, catalog = _load_set(args)
    net = Network.load(args.net)
    maps = harness.predict_set_maps(net, catalog, image_set, net.spec.input_shape[1:])
    meta = {"kind": "gaze-prediction", "net": str(args.net), "image_set": image_set.kind}
    return _save_maps(args, image_set, maps, meta)


def cmd_gaze_maps(args) -> int:
    image_set, catalog = _load_set(args)
    cfg = GazeMapConfig(args.sigma_px, _size(args.size))
    maps = harness.gaze_set_maps(catalog, image_set, cfg)
    meta = {"kind": "gaze", "sigma_px": cfg.sigma_px, "image_set": image_set.kind}
    return _save_maps(args, image_set, maps, meta)


def cmd_baseline(args) -> int:
    image_set, catalog = _load_set(args)
    itti = IttiKochConfig(levels=args.levels, map_level=args.map_level)
    flow = FlowConfig(winsize=args.winsize, levels=args.flow_levels, iterations=args.iterations)
    maps = harness.baseline_set_maps(args.method, catalog, image_set, _size(args.size), itti, flow)
    cfg = itti.__dict__ if args.method == "itti-koch" else flow.__dict__
    meta = {"kind": args.method, "config": cfg, "image_set": image_set.kind}
    return _save_maps(args, image_set, maps, meta)


def _metric_config(args) -> MetricConfig:
    crop = Rect.parse(args.crop) if args.crop else None
    return MetricConfig(epsilon=args.epsilon, auc_variant=args.auc_variant, crop=crop)


def cmd_compare(args) -> int:
    image_set = harness.ImageSet.load(args.set)
    agent = harness.load_map_bundle(args.agent)
    reference = harness.load_map_bundle(args.reference)
    fixations = None
    if args.data_root or os.environ.get(harness.DATA_ROOT_ENV):
        fixations = harness.fixation_source(harness.load_catalog(_data_root(args)))
    provenance = {"agent": harness.bundle_meta(args.agent), "reference": harness.bundle_meta(args.reference)}
    for item in args.label or ():
        key, _, value = item.partition("=")
        provenance[key] = value
    report = harness.run_comparison(agent, reference, image_set, _metric_config(args), fixations, provenance)
    if args.against:
        harness.compare_reports(report, harness.MetricReport.load(args.against), args.metric)
    report.save(args.out)
    return EXIT_OK


def cmd_consistency(args) -> int:
    bundles = [harness.load_map_bundle(d) for d in args.maps]
    members = sorted(set.intersection(*(set(b) for b in bundles)))
    rows, averaged = [], []
    for member in members:
        maps = [b[member] for b in bundles]
        mean, values = harness.pairwise_consistency(maps)
        rows.append({"episode": member[0], "frame_id": member[1], "mean_cc": mean, "pair_ccs": values})
        averaged.append(harness.average_seed_maps(maps))
    if args.average_out:
        harness.save_map_bundle(args.average_out, members, averaged, {"kind": "seed-average", "seeds": [str(d) for d in args.maps]})
    defined = [r["mean_cc"] for r in rows if not math.isnan(r["mean_cc"])]
    overall = sum(defined) / len(defined) if defined else math.nan
    _emit(_dump({"n_maps": len(bundles), "n_frames": len(rows), "mean_cc": overall, "frames": rows}), args.out)
    return EXIT_OK


def _scores(args) -> list:
    if args.scores_file:
        return [float(line) for line in Path(args.scores_file).read_text().split() if line.strip()]
    return list(args.scores or ())


def cmd_correlate(args) -> int:
    reports = [harness.MetricReport.load(p) for p in args.reports]
    scores = harness.normalize_scores(_scores(args), args.normalize, args.ref) if args.normalize else _scores(args)
    result = harness.correlate_with_scores(reports, scores, args.metric)
    payload = {
        "metric": args.metric,
        "metric_means": [r.mean(args.metric) for r in reports],
        "scores": [float(s) for s in scores],
        "r": result.r,
        "p": result.p,
        "df": result.df,
        "undefined": result.undefined,
    }
    _emit(_dump(payload), args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    """One plot-ready row per (report, metric) with mean, SEM and n."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["report", "image_set", "metric", "n", "mean", "sem"])
    for path in args.reports:
        report = harness.MetricReport.load(path)
        for metric, agg in report.aggregates().items():
            writer.writerow([Path(path).stem, report.provenance.get("image_set", ""), metric, agg["n"], harness._fmt(agg["mean"]), harness._fmt(agg["sem"])])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_init_net(args) -> int:
    if args.kind == "gaze":
        spec = gaze_network_spec()
    else:
        spec = atari_policy_spec(args.actions, output_kind=args.output_kind)
    Network(spec, random_weights(spec, args.seed)).save(args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlattention", description="Compare agent saliency with human attention.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, data=True):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        if data:
            p.add_argument("--data-root", help=f"dataset root (default ${harness.DATA_ROOT_ENV})")
        return p

    p = add("ingest", cmd_ingest, "validate a dataset and print a summary")
    p.add_argument("--out")

    p = add("build-set", cmd_build_set, "build an image set")
    p.add_argument("kind", choices=("standard", "failure", "unseen"))
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--episode", help="episode directory name (standard sets)")
    p.add_argument("--lookback", type=int, default=1, help="frames before each life loss (failure sets)")
    p.add_argument("--out")

    p = add("extract-saliency", cmd_extract, "perturbation saliency maps for an image set")
    p.add_argument("--net", required=True)
    p.add_argument("--set", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask-sigma", type=float, default=PerturbationConfig.mask_sigma)
    p.add_argument("--blur-sigma", type=float, default=PerturbationConfig.blur_sigma)
    p.add_argument("--stride", type=int, default=PerturbationConfig.stride)
    p.add_argument("--no-upsample", action="store_true")
    p.add_argument("--frames", choices=("all", "last"), default="all")

    p = add("predict-gaze", cmd_predict_gaze, "gaze-network predictions for an image set")
    p.add_argument("--net", required=True)
    p.add_argument("--set", required=True)
    p.add_argument("--out", required=True)

    p = add("gaze-maps", cmd_gaze_maps, "blurred recorded-gaze maps for an image set")
    p.add_argument("--set", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigma-px", type=float, default=GazeMapConfig.sigma_px)
    p.add_argument("--size", default="84x84", help="HxW")

    p = add("baseline", cmd_baseline, "bottom-up or motion saliency for an image set")
    p.add_argument("--method", choices=("itti-koch", "flow"), required=True)
    p.add_argument("--set", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", default="84x84", help="HxW")
    p.add_argument("--levels", type=int, default=IttiKochConfig.levels)
    p.add_argument("--map-level", type=int, default=IttiKochConfig.map_level)
    p.add_argument("--winsize", type=int, default=FlowConfig.winsize)
    p.add_argument("--flow-levels", type=int, default=FlowConfig.levels)
    p.add_argument("--iterations", type=int, default=FlowConfig.iterations)

    p = add("compare", cmd_compare, "per-frame metrics of agent maps against reference maps")
    p.add_argument("--agent", required=True, help="map bundle directory")
    p.add_argument("--reference", required=True, help="map bundle directory")
    p.add_argument("--set", required=True)
    p.add_argument("--out", required=True, help="output prefix; writes .csv and .json")
    p.add_argument("--epsilon", type=float, default=MetricConfig.epsilon)
    p.add_argument("--auc-variant", choices=("exact", "judd"), default="exact")
    p.add_argument("--crop", help="top,left,bottom,right")
    p.add_argument("--against", help="second report JSON for a Welch test")
    p.add_argument("--metric", default="cc", choices=harness.METRICS)
    p.add_argument("--label", action="append", help="key=value provenance entry (repeatable)")

    p = add("consistency", cmd_consistency, "pairwise CC between seed map bundles", data=False)
    p.add_argument("maps", nargs="+", help="map bundle directories, one per seed")
    p.add_argument("--average-out", help="write the seed-averaged maps here")
    p.add_argument("--out")

    p = add("correlate", cmd_correlate, "Pearson correlation of report means with scores", data=False)
    p.add_argument("reports", nargs="+")
    p.add_argument("--scores", type=float, nargs="+")
    p.add_argument("--scores-file")
    p.add_argument("--normalize", choices=("by_final", "by_reference"))
    p.add_argument("--ref", type=float)
    p.add_argument("--metric", default="cc", choices=harness.METRICS)
    p.add_argument("--out")

    p = add("report", cmd_report, "aggregate table over report JSON files", data=False)
    p.add_argument("reports", nargs="+")
    p.add_argument("--out")

    p = add("init-net", cmd_init_net, "write a randomly initialized reference network", data=False)
    p.add_argument("--kind", choices=("gaze", "policy"), required=True)
    p.add_argument("--actions", type=int, default=18)
    p.add_argument("--output-kind", choices=("action_distribution", "action_values"), default="action_distribution")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (AttentionError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
