"""Command-line orchestration: synth | label | superpixel | train | em |
rectify | eval | serve-annotate. Every run writes its artifacts plus a
manifest; reruns with the same inputs are byte-identical."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__, report, synth, wlb
from .activelabel import (
    LabelSet,
    PillarConfig,
    RansacConfig,
    cluster_assignments_from_gt,
    cluster_scene,
    label_scene,
    label_statistics,
    labels_to_text,
    load_labels,
    save_labels,
)
from .activelabel import PseudoLabel
from .rectify import baseline_filters, candidate_indices
from .superpixel import SuperpixelMap, seeds_segment
from . import trainer as trainer_mod
from . import metrics as metrics_mod


class CliError(Exception):
    def __init__(self, category: str, message: str, exit_code: int = 1):
        super().__init__(message)
        self.category = category
        self.exit_code = exit_code


def _config_error(message: str) -> CliError:
    return CliError("config", message, exit_code=2)


def parse_seed_range(text: str) -> list[int]:
    """'a..b' inclusive, or a comma list of integers."""
    if ".." in text:
        lo, _, hi = text.partition("..")
        try:
            lo_i, hi_i = int(lo), int(hi)
        except ValueError as exc:
            raise _config_error(f"bad seed range {text!r}") from exc
        if hi_i < lo_i:
            raise _config_error(f"empty seed range {text!r}")
        return list(range(lo_i, hi_i + 1))
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise _config_error(f"bad seed list {text!r}") from exc


def write_run_manifest(out_dir: Path, command: str, fields: dict[str, str]) -> None:
    artifacts = sorted(
        p.name for p in out_dir.iterdir() if p.is_file() and p.name != "manifest.txt"
    )
    manifest = {
        "command": command,
        "tool_version": __version__,
        "artifacts": ",".join(artifacts),
        **fields,
    }
    wlb.write_manifest(out_dir / "manifest.txt", manifest)


def scene_paths(scenes_dir: Path) -> list[Path]:
    paths = sorted(Path(scenes_dir).glob("scene_*.wlb"))
    if not paths:
        raise CliError("io", f"no scene_*.wlb files in {scenes_dir}")
    return paths


def scene_id_of(path: Path) -> str:
    return path.stem.removeprefix("scene_").removeprefix("labels_").removeprefix("spx_")


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    config_path = Path(args.config)
    if not config_path.is_file():
        raise _config_error(f"config file not found: {config_path}")
    try:
        config = synth.config_from_text(config_path.read_text(encoding="utf-8"))
    except synth.ConfigError as exc:
        raise _config_error(str(exc)) from exc
    seeds = parse_seed_range(args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in seeds:
        frame = synth.generate_scene(config, seed)
        synth.save_scene(frame, out / f"scene_{seed:05d}.wlb")
    write_run_manifest(
        out,
        f"synth --config {config_path.name} --seeds {args.seeds}",
        {
            "config_hash": wlb.sha256_of(config_path),
            "seeds": ",".join(str(s) for s in seeds),
        },
    )
    print(f"synth: wrote {len(seeds)} scenes to {out}")
    return 0


def _pillar_config(args) -> PillarConfig:
    return PillarConfig(radial_bins=args.radial_bins, angular_bins=args.angular_bins)


def cmd_label(args) -> int:
    scenes = scene_paths(Path(args.scenes))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    clicks_lines: list[str] = []
    stats_sets = []
    for path in scenes:
        frame = synth.load_scene(path)
        label_fn = cluster_scene if args.skip_annotation else label_scene
        scene_labels = label_fn(
            frame,
            _pillar_config(args),
            RansacConfig(),
            min_cluster_size=args.min_cluster_size,
            min_samples=args.min_samples,
            annotation_max_range=args.max_range,
        )
        sid = scene_id_of(path)
        save_labels(scene_labels, out / f"labels_{sid}.wlb")
        if args.text_export:
            (out / f"labels_{sid}.txt").write_text(
                labels_to_text(scene_labels.label_set), encoding="utf-8"
            )
        if args.emit_clicks:
            clicks_lines.append(f"scene id={sid}")
            for cid, members in enumerate(scene_labels.annotation_clusters()):
                picks = cluster_assignments_from_gt(frame.points, members, frame.gt_class)
                if len(picks) == 1:
                    clicks_lines.append(f"click cluster={cid} mode=pure class={picks[0][0]}")
                else:
                    assigns = ",".join(f"{c}:{p}" for c, p in picks)
                    clicks_lines.append(f"click cluster={cid} mode=mixed assigns={assigns}")
        stats_sets.append(scene_labels.label_set)
    if args.emit_clicks:
        Path(args.emit_clicks).write_text("\n".join(clicks_lines) + "\n", encoding="utf-8")
    stats = label_statistics(stats_sets)
    report.save_label_coverage(stats, out / "label_coverage.png")
    write_run_manifest(
        out,
        f"label --scenes {Path(args.scenes).name}",
        {"scenes": ",".join(p.name for p in scenes), "sparse_rate": f"{stats.sparse_rate:.6f}"},
    )
    print(
        f"label: {len(scenes)} scenes, sparse {100 * stats.sparse_rate:.2f}%, "
        f"coverage {100 * stats.coverage:.1f}%"
    )
    return 0


def cmd_superpixel(args) -> int:
    scenes = scene_paths(Path(args.scenes))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in scenes:
        frame = synth.load_scene(path)
        sections: dict = {}
        for ci, image in enumerate(frame.images):
            spx = seeds_segment(image, args.n, iterations=args.iterations)
            sections[f"spx/{ci}/assignment"] = spx.assignment
            sections[f"spx/{ci}/num"] = np.array([spx.num_superpixels], dtype=np.int64)
        wlb.write_container(out / f"spx_{scene_id_of(path)}.wlb", sections)
    write_run_manifest(
        out,
        f"superpixel --n {args.n}",
        {"num_superpixels": str(args.n), "scenes": ",".join(p.name for p in scenes)},
    )
    print(f"superpixel: segmented {len(scenes)} scenes into ~{args.n} superpixels per image")
    return 0


def load_superpixel_maps(spx_path: Path, frame) -> list[SuperpixelMap]:
    data = wlb.read_container(spx_path)
    maps = []
    for ci, image in enumerate(frame.images):
        assignment = data[f"spx/{ci}/assignment"]
        k = int(data[f"spx/{ci}/num"][0])
        sizes = np.bincount(assignment.ravel(), minlength=k).astype(np.int64)
        h, w = assignment.shape
        vs, us = np.mgrid[0:h, 0:w]
        centroids = np.zeros((k, 2))
        np.add.at(centroids[:, 0], assignment.ravel(), us.ravel())
        np.add.at(centroids[:, 1], assignment.ravel(), vs.ravel())
        centroids /= np.maximum(sizes[:, None], 1)
        mean_colors = np.zeros((k, 3))
        np.add.at(mean_colors, assignment.ravel(), np.asarray(image, dtype=np.float64).reshape(-1, 3))
        mean_colors /= np.maximum(sizes[:, None], 1)
        maps.append(
            SuperpixelMap(
                assignment=assignment,
                num_superpixels=k,
                sizes=sizes,
                centroids=centroids,
                mean_colors=mean_colors,
            )
        )
    return maps


def _train_config(args) -> trainer_mod.TrainConfig:
    return trainer_mod.TrainConfig(
        lr=args.lr,
        momentum=args.momentum,
        batch_points=args.batch_points,
        epochs=args.epochs,
        em_max_iterations=args.em_iterations,
        improvement_tol=args.tolerance,
        seg_weight=args.seg_weight,
        assoc_weight=args.assoc_weight,
        beta_walker=args.beta_walker,
        beta_visit=args.beta_visit,
        use_propagated=not args.no_propagated,
        use_negative=not args.no_negative,
        use_pseudo=not args.no_pseudo,
        hard_pseudo_labels=args.hard_pseudo,
        augment=not args.no_augment,
        delta=args.delta,
        alpha=args.alpha,
        seed=args.train_seed,
    )


def _load_training_data(args, cfg, full_gt_labels=False):
    scenes = []
    label_sets = []
    for path in scene_paths(Path(args.scenes)):
        sid = scene_id_of(path)
        frame = synth.load_scene(path)
        labels_path = Path(args.labels) / f"labels_{sid}.wlb"
        if not labels_path.is_file():
            raise CliError("io", f"missing labels for scene {sid}: {labels_path}")
        scene_labels = load_labels(labels_path)
        label_set = scene_labels.label_set
        if full_gt_labels:
            # 100%-supervision upper bound: every point sparse-labeled with gt;
            # association is moot (no sparse scarcity), superpixels skipped
            label_set = LabelSet(num_points=frame.num_points)
            label_set.sparse = {int(i): int(c) for i, c in enumerate(frame.gt_class)}
            spx_maps = []
        else:
            spx_path = Path(args.superpixels) / f"spx_{sid}.wlb"
            if not spx_path.is_file():
                raise CliError("io", f"missing superpixels for scene {sid}: {spx_path}")
            spx_maps = load_superpixel_maps(spx_path, frame)
        scenes.append(trainer_mod.prepare_scene(frame, spx_maps, label_set))
        label_sets.append(label_set)
    return scenes, label_sets


def _load_val_scenes(args):
    scenes = []
    for path in scene_paths(Path(args.val_scenes)):
        frame = synth.load_scene(path)
        empty = LabelSet(num_points=frame.num_points)
        scenes.append(trainer_mod.prepare_scene(frame, [], empty))
    return scenes


def _run_training(args, em_mode: bool) -> int:
    cfg = _train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_scenes, train_labels = _load_training_data(args, cfg, full_gt_labels=args.full_labels)
    val_scenes = _load_val_scenes(args)
    state = trainer_mod.init_state(train_scenes[0].num_classes, cfg)
    metrics_lines: list[str] = []

    def log(em_iter, epoch, step, diag):
        metrics_lines.append(report.metrics_stream_line(em_iter, epoch, step, diag))

    if em_mode:
        em = trainer_mod.em_loop(state, train_scenes, train_labels, val_scenes, cfg, log=log)
        history = em.miou_history
        pseudo_added = em.pseudo_added
        for it, quality in enumerate(em.pseudo_quality):
            metrics_lines.append(f"pseudo iteration={it} {quality}")
    else:
        trainer_mod.m_step(state, train_scenes, train_labels, cfg, em_iteration=0, log=log)
        miou, _, _ = trainer_mod.evaluate(state, val_scenes)
        history = [miou]
        pseudo_added = []
    for it, miou in enumerate(history):
        metrics_lines.append(f"miou iteration={it} value={miou:.6f}")
    (out / "metrics.txt").write_text("\n".join(metrics_lines) + "\n", encoding="utf-8")
    report.save_em_curve(history, pseudo_added, out / "em_miou.png")
    wlb.write_container(out / "checkpoint.wlb", trainer_mod.state_to_sections(state, cfg))
    if em_mode:
        labels_out = out / "labels"
        labels_out.mkdir(exist_ok=True)
        for path, label_set in zip(scene_paths(Path(args.scenes)), train_labels):
            sid = scene_id_of(path)
            source = load_labels(Path(args.labels) / f"labels_{sid}.wlb")
            source.label_set.pseudo = label_set.pseudo
            save_labels(source, labels_out / f"labels_{sid}.wlb")
    write_run_manifest(
        out,
        ("em" if em_mode else "train"),
        {
            "train_config_hash": wlb.sha256_text(trainer_mod.train_config_to_text(cfg)),
            "final_miou": f"{history[-1]:.6f}",
        },
    )
    print(f"{'em' if em_mode else 'train'}: final validation mIoU {100 * history[-1]:.2f}")
    return 0


def cmd_train(args) -> int:
    return _run_training(args, em_mode=False)


def cmd_em(args) -> int:
    return _run_training(args, em_mode=True)


def cmd_rectify(args) -> int:
    cfg = _train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = wlb.read_container(Path(args.checkpoint))
    state, _ = trainer_mod.state_from_sections(data)
    scenes, label_sets = _load_training_data(args, cfg)
    lines = []
    if args.method == "act-fsf":
        added, batches = trainer_mod.e_step(state, scenes, label_sets, cfg, args.iteration)
        quality = trainer_mod.pseudo_quality(scenes, batches)
        lines.append(f"rectify method=act-fsf added={added} {quality}")
    else:
        added = 0
        all_pred, all_mask, all_gt = [], [], []
        for scene, ls in zip(scenes, label_sets):
            probs, _ = trainer_mod.predict_scene(state, scene)
            cand = candidate_indices(ls, args.iteration)
            if args.method == "dars":
                _, lab_cls, _ = ls.labeled_points(use_propagated=True)
                hist = np.bincount(lab_cls, minlength=scene.num_classes)
                mask = baseline_filters(probs[cand], "dars", labeled_hist=np.maximum(hist, 1))
            else:
                mask = baseline_filters(probs[cand], args.method, tau=cfg.alpha)
            pred = probs[cand].argmax(axis=1)
            conf = probs[cand].max(axis=1)
            for k, point in enumerate(cand):
                if mask[k] and int(point) not in ls.pseudo:
                    ls.pseudo[int(point)] = PseudoLabel(int(pred[k]), float(conf[k]), args.iteration)
                    added += 1
            all_pred.append(pred)
            all_mask.append(mask)
            all_gt.append(scene.gt_class[cand])
        quality = metrics_mod.pseudo_label_quality(
            np.concatenate(all_pred), np.concatenate(all_mask), np.concatenate(all_gt)
        )
        lines.append(f"rectify method={args.method} added={added} {quality}")
    for path, ls in zip(scene_paths(Path(args.scenes)), label_sets):
        sid = scene_id_of(path)
        source = load_labels(Path(args.labels) / f"labels_{sid}.wlb")
        source.label_set.pseudo = ls.pseudo
        save_labels(source, out / f"labels_{sid}.wlb")
    (out / "rectify_report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_run_manifest(out, f"rectify --method {args.method}", {"method": args.method})
    print(lines[0])
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = wlb.read_container(Path(args.checkpoint))
    state, _ = trainer_mod.state_from_sections(data)
    scenes = []
    class_names = None
    for path in scene_paths(Path(args.scenes)):
        frame = synth.load_scene(path)
        class_names = frame.config.class_names
        scenes.append(trainer_mod.prepare_scene(frame, [], LabelSet(num_points=frame.num_points)))
    miou, iou, cm = trainer_mod.evaluate(state, scenes)
    text = report.eval_report_text(iou, class_names, miou, cm)
    (out / "report.txt").write_text(text, encoding="utf-8")
    report.save_iou_bars(iou, class_names, miou, out / "iou_per_class.png")
    write_run_manifest(out, "eval", {"miou": f"{miou:.6f}"})
    print(f"eval: mIoU {100 * miou:.2f} over {len(scenes)} scenes")
    return 0


def cmd_serve_annotate(args) -> int:
    from .server import serve_annotate

    assets = args.assets
    if assets is not None and not Path(assets).is_dir():
        raise _config_error(f"assets directory not found: {assets}")
    print(f"serve-annotate: listening on 127.0.0.1:{args.port}")
    serve_annotate(
        args.scenes, args.labels, port=args.port, assets_dir=assets, readonly=args.readonly
    )
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weaklab", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", required=True, help="inclusive range a..b or comma list")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("label", help="active labeling over scenes")
    p.add_argument("--scenes", "--in", dest="scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--radial-bins", type=int, default=4)
    p.add_argument("--angular-bins", type=int, default=10)
    p.add_argument("--min-cluster-size", type=int, default=10)
    p.add_argument("--min-samples", type=int, default=5)
    p.add_argument("--max-range", type=float, default=None, help="annotate only clusters within this planar range")
    p.add_argument("--skip-annotation", action="store_true", help="ground+clusters only; label via serve-annotate")
    p.add_argument("--text-export", action="store_true")
    p.add_argument("--emit-clicks", default=None, help="write the oracle's click script")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("superpixel", help="SEEDS superpixels for every camera image")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--iterations", type=int, default=6)
    p.set_defaults(func=cmd_superpixel)

    def add_train_flags(p, need_val=True):
        p.add_argument("--scenes", required=True)
        p.add_argument("--labels", required=True)
        p.add_argument("--superpixels", required=True)
        p.add_argument("--val-scenes", required=need_val)
        p.add_argument("--out", required=True)
        p.add_argument("--lr", type=float, default=0.08)
        p.add_argument("--momentum", type=float, default=0.9)
        p.add_argument("--batch-points", type=int, default=1024)
        p.add_argument("--epochs", type=int, default=8)
        p.add_argument("--em-iterations", type=int, default=3)
        p.add_argument("--tolerance", type=float, default=0.1, help="mIoU points")
        p.add_argument("--seg-weight", type=float, default=1.0)
        p.add_argument("--assoc-weight", type=float, default=0.5)
        p.add_argument("--beta-walker", type=float, default=1.0)
        p.add_argument("--beta-visit", type=float, default=0.5)
        p.add_argument("--delta", type=float, default=0.1)
        p.add_argument("--alpha", type=float, default=0.5)
        p.add_argument("--no-propagated", action="store_true")
        p.add_argument("--no-negative", action="store_true")
        p.add_argument("--no-pseudo", action="store_true")
        p.add_argument("--hard-pseudo", action="store_true")
        p.add_argument("--no-augment", action="store_true")
        p.add_argument("--full-labels", action="store_true", help="100%% gt supervision upper bound")
        p.add_argument("--train-seed", type=int, default=0)

    p = sub.add_parser("train", help="supervised warm-up training only")
    add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("em", help="full EM self-training loop")
    add_train_flags(p)
    p.set_defaults(func=cmd_em)

    p = sub.add_parser("rectify", help="standalone E-step with a chosen filter")
    add_train_flags(p, need_val=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--method", choices=("act-fsf", "fix", "esl", "dars"), default="act-fsf")
    p.add_argument("--iteration", type=int, default=0)
    p.set_defaults(func=cmd_rectify)

    p = sub.add_parser("eval", help="mIoU report for a checkpoint")
    p.add_argument("--scenes", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve-annotate", help="annotation HTTP service + UI assets")
    p.add_argument("--scenes", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--port", type=int, default=8749)
    p.add_argument("--assets", default=None)
    p.add_argument("--readonly", action="store_true")
    p.set_defaults(func=cmd_serve_annotate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"weaklab: error: {exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"weaklab: error: io: {exc}", file=sys.stderr)
        return 1
    except (ValueError, synth.ConfigError) as exc:
        print(f"weaklab: error: invalid: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
