"""Command-line frontend: preprocess, train, eval, baseline, explain, topoplot.

Exit codes: 0 on success, 2 for input or configuration errors (bad paths,
malformed files, digest mismatches), 3 for unexpected runtime failures.
The MI_LRP_LOG environment variable sets the log level (DEBUG, INFO,
WARNING, ERROR; default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import autonet, cspbase, featmap, harness, lrp, topoviz, trialio
from .config import RunConfig

log = logging.getLogger("milrp")

EXIT_INPUT_ERROR = 2
EXIT_RUNTIME_ERROR = 3


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0,
                        help="base seed; all randomness derives from it")
    parser.add_argument("--bands", type=str, default=None,
                        help="six comma-separated lo-hi pairs, e.g. "
                             "'4-8,8-13,13-30,4-13,8-30,4-30'")
    parser.add_argument("--window", type=float, nargs=2, default=None,
                        metavar=("START", "END"),
                        help="analysis window in seconds after cue onset "
                             "(default 0.5 2.5)")
    parser.add_argument("--lr", type=float, default=None,
                        help="Adam learning rate (default 1e-4)")
    parser.add_argument("--iterations", type=int, default=None,
                        help="training iterations (default 300)")
    parser.add_argument("--batch-size", type=int, default=None,
                        help="mini-batch size; 0 trains full-batch (default 64)")
    parser.add_argument("--lrp-rule", choices=("epsilon", "alpha_beta"),
                        default=None, help="relevance rule (default epsilon)")
    parser.add_argument("--epsilon", type=float, default=None,
                        help="epsilon-rule stabilizer (default 1e-6)")
    parser.add_argument("--csp-pairs", type=int, default=None,
                        help="CSP filter pairs m (default 3)")
    parser.add_argument("--include-rejected", action="store_true",
                        help="keep trials the import manifest marks rejected")


def _parse_bands(text: str):
    pairs = []
    for part in text.split(","):
        lo, _, hi = part.partition("-")
        pairs.append((float(lo), float(hi)))
    return tuple(pairs)


def _config_from_args(args) -> RunConfig:
    kwargs = {"seed": args.seed, "include_rejected": args.include_rejected}
    if args.bands is not None:
        kwargs["bands"] = _parse_bands(args.bands)
    if args.window is not None:
        kwargs["window"] = tuple(args.window)
    for name in ("lr", "iterations", "epsilon"):
        value = getattr(args, name)
        if value is not None:
            kwargs[name] = value
    if args.batch_size is not None:
        kwargs["batch_size"] = None if args.batch_size == 0 else args.batch_size
    if args.lrp_rule is not None:
        kwargs["lrp_rule"] = args.lrp_rule
    if args.csp_pairs is not None:
        kwargs["csp_pairs"] = args.csp_pairs
    return RunConfig(**kwargs)


def _session_dirs(root: Path):
    """Discover (subject, session) -> source under a dataset root."""
    sources = {}
    for mits in sorted(root.glob("*.mits")):
        name = mits.stem
        sources[(name[:-1], name[-1])] = mits
    for sub in sorted(root.glob("mits/*.mits")):
        name = sub.stem
        sources.setdefault((name[:-1], name[-1]), sub)
    for manifest in sorted(root.glob("*/manifest.json")):
        name = manifest.parent.name
        sources.setdefault((name[:-1], name[-1]), manifest.parent)
    if not sources:
        raise FileNotFoundError(
            f"no sessions under {root}: expected <SUBJ><SESS>.mits files or "
            f"<SUBJ><SESS>/manifest.json import directories")
    return sources


def _load_dataset(root: Path, config: RunConfig, subjects=None):
    dataset = {}
    for (subj, sess), source in _session_dirs(root).items():
        if subjects is not None and subj not in subjects:
            continue
        if source.is_dir():
            tset = trialio.import_text(source,
                                       include_rejected=config.include_rejected)
        else:
            tset = trialio.read_trialset(source)
        dataset[(subj, sess)] = tset
        log.info("loaded %s%s: %d trials", subj, sess, len(tset.trials))
    return dataset


def _load_caches(root: Path, config: RunConfig, grid) -> dict:
    caches = {}
    cache_dir = root / "cache"
    if not cache_dir.is_dir():
        return caches
    for path in sorted(cache_dir.glob("*.tensors")):
        name = path.stem
        tensors, grid_hash, digest = trialio.load_tensors(
            path, expected_grid_hash=grid.hash())
        if digest != config.digest():
            raise ValueError(
                f"{path}: cache was built under config digest {digest}, "
                f"current flags give {config.digest()}; re-run preprocess "
                f"or match the flags")
        if grid_hash == grid.hash():
            caches[(name[:-1], name[-1])] = tensors
    return caches


def cmd_preprocess(args) -> int:
    config = _config_from_args(args)
    grid = featmap.default_grid()
    out = Path(args.out)
    (out / "mits").mkdir(parents=True, exist_ok=True)
    (out / "cache").mkdir(parents=True, exist_ok=True)
    dataset = _load_dataset(Path(args.dataset), config,
                            subjects=set(args.subjects) if args.subjects else None)
    counts: dict[str, int] = {}
    for (subj, sess), tset in sorted(dataset.items()):
        trialio.write_trialset(tset, out / "mits" / f"{subj}{sess}.mits")
        tensors = featmap.tensors_from_trialset(tset, config, grid)
        trialio.cache_tensors(tensors, out / "cache" / f"{subj}{sess}.tensors",
                              grid_hash=grid.hash(), config_digest=config.digest())
        counts[subj] = counts.get(subj, 0) + len(tset.trials)
        log.info("preprocessed %s%s", subj, sess)
    for subj in sorted(counts):
        print(f"{subj}: {counts[subj]} trials")
    print(f"config digest: {config.digest()}")
    return 0


def cmd_train(args) -> int:
    config = _config_from_args(args)
    grid = featmap.default_grid()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _load_dataset(Path(args.dataset), config,
                            subjects=set(args.subjects) if args.subjects else None)
    caches = _load_caches(Path(args.dataset), config, grid)
    tensors = []
    for member, tset in sorted(dataset.items()):
        got = caches.get(member)
        tensors.extend(got if got is not None
                       else featmap.tensors_from_trialset(tset, config, grid))
    model = autonet.CnnModel.initialize(seed=config.seed, band_order=config.bands,
                                        grid_hash=grid.hash(),
                                        config_digest=config.digest())
    model, losses = autonet.train(model, tensors, config.train_config())
    path = out / "model.micn"
    autonet.save_model(model, path)
    print(f"trained on {len(tensors)} tensors; final loss {losses[-1]:.6f}")
    print(f"model written to {path}")
    return 0


def _run_loso(args, baseline_only: bool) -> int:
    config = _config_from_args(args)
    grid = featmap.default_grid()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _load_dataset(Path(args.dataset), config)
    caches = _load_caches(Path(args.dataset), config, grid)

    models_dir = out / "models"
    models_dir.mkdir(exist_ok=True)

    def sink(subject, model, csp, lda):
        if model is not None:
            autonet.save_model(model, models_dir / f"{subject}.micn")
        cspbase.save_baseline_model(csp, lda, models_dir / f"{subject}.cspb",
                                    config_digest=config.digest())

    report = harness.run_experiment(
        dataset, config, jobs=args.jobs,
        subjects_filter=args.subjects if args.subjects else None,
        tensors_by_session=caches or None, model_sink=sink,
        run_proposed=not baseline_only)

    (out / "report.txt").write_text(report.table(), encoding="utf-8")
    (out / "report.json").write_text(report.to_machine(), encoding="utf-8")
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    harness.render_report_figure(report, out / "report.svg")
    print(report.table(), end="")
    if report.partial:
        print("warning: some folds failed; report is partial", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    return _run_loso(args, baseline_only=False)


def cmd_baseline(args) -> int:
    return _run_loso(args, baseline_only=True)


def _explain_one(model, tset, config, grid, rule):
    tensors = featmap.tensors_from_trialset(tset, config, grid)
    labels = [t.label for t in tset.trials]
    preds = [autonet.predict(model, t)[0] for t in tensors]
    maps = [lrp.explain(model, t, pred, rule, grid,
                        trial_id=f"{tset.subject}{tset.session}:{i:03d}")
            for i, (t, pred) in enumerate(zip(tensors, preds))]
    return maps, preds, labels


def cmd_explain(args) -> int:
    config = _config_from_args(args)
    grid = featmap.default_grid()
    rule = config.rule()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model_arg = Path(args.model)

    dataset = _load_dataset(Path(args.dataset), config,
                            subjects=set(args.subjects) if args.subjects else None)
    subjects = sorted({subj for subj, sess in dataset if (subj, "E") in dataset})
    if not subjects:
        raise ValueError("no evaluation sessions found to explain")

    lo, hi = args.range
    grand: dict[str, list[np.ndarray]] = {cls: [] for cls in lrp.CLASSES}
    for subj in subjects:
        if model_arg.is_dir():
            model_path = model_arg / f"{subj}.micn"
        else:
            model_path = model_arg
        model = autonet.load_model(model_path)
        if model.config_digest and model.config_digest != config.digest():
            raise ValueError(
                f"{model_path}: model carries config digest "
                f"{model.config_digest}, current flags give {config.digest()}")
        maps, preds, labels = _explain_one(model, dataset[(subj, "E")],
                                           config, grid, rule)
        lrp.write_relevance_table(maps, out / f"relevance_{subj}.tsv",
                                  config_digest=config.digest())
        aggs = lrp.aggregate(maps, preds, labels, grid)
        panels = {}
        for cls, agg in aggs.items():
            if agg.mean_map is None:
                print(f"{subj}: no correctly classified {cls} trials; "
                      f"skipping that panel", file=sys.stderr)
                continue
            panels[cls] = topoviz.TopoPlot(scores=agg.mean_map.per_channel,
                                           lo=lo, hi=hi)
            grand[cls].append(agg.mean_map.planes)
        if len(panels) == 2:
            topoviz.side_by_side(panels["left"], panels["right"], subj,
                                 out / f"topo_{subj}.svg",
                                 footnote=f"digest {config.digest()}")
        elif panels:
            cls, plot = next(iter(panels.items()))
            topoviz.render(plot, out / f"topo_{subj}.svg", title=f"{subj} {cls}",
                           footnote=f"digest {config.digest()}")
        print(f"{subj}: explained {len(maps)} trials "
              f"({sum(p == y for p, y in zip(preds, labels))} correct)")

    panels = {}
    for cls, stack in grand.items():
        if not stack:
            continue
        mean_map = lrp.RelevanceMap.build(np.mean(stack, axis=0), grid,
                                          source=("grand", cls, float("nan")))
        panels[cls] = topoviz.TopoPlot(scores=mean_map.per_channel, lo=lo, hi=hi)
    if len(panels) == 2:
        topoviz.side_by_side(panels["left"], panels["right"], "grand average",
                             out / "topo_grand_average.svg",
                             footnote=f"digest {config.digest()}")
    return 0


def cmd_topoplot(args) -> int:
    rows, digest = lrp.read_relevance_table(args.table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lo, hi = args.range
    by_class: dict[str, dict[str, list[float]]] = {}
    for _, cls, channel, value in rows:
        by_class.setdefault(cls, {}).setdefault(channel, []).append(value)
    if not by_class:
        raise ValueError(f"{args.table}: no rows to plot")
    panels = {}
    for cls, per_channel in sorted(by_class.items()):
        scores = {ch: float(np.mean(vs)) for ch, vs in per_channel.items()}
        panels[cls] = topoviz.TopoPlot(scores=scores, lo=lo, hi=hi)
        topoviz.render(panels[cls], out / f"topo_{cls}.svg",
                       title=f"{args.label} {cls}",
                       footnote=f"digest {digest}" if digest else "")
        print(f"wrote {out / f'topo_{cls}.svg'}")
    if set(panels) == {"left", "right"}:
        topoviz.side_by_side(panels["left"], panels["right"], args.label,
                             out / "topo_pair.svg",
                             footnote=f"digest {digest}" if digest else "")
        print(f"wrote {out / 'topo_pair.svg'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="milrp",
        description="Motor-imagery EEG decoding with an interpretable CNN.",
        epilog="exit codes: 0 success, 2 input error, 3 runtime failure")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess",
                       help="import recordings, build tensors, write caches")
    p.add_argument("--dataset", required=True, help="dataset root directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--subjects", nargs="+", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one model on the given sessions")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", nargs="+", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    for name, fn, help_text in (
            ("eval", cmd_eval, "run the full subject-independent protocol"),
            ("baseline", cmd_baseline, "run the CSP+LDA baseline protocol")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--dataset", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="parallel fold processes (default: machine cores)")
        p.add_argument("--subjects", nargs="+", default=None,
                       help="run only these subjects' folds")
        _add_config_flags(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("explain",
                       help="relevance tables and topographies from a model")
    p.add_argument("--model", required=True,
                   help="model file, or a models directory with <SUBJ>.micn")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", nargs="+", default=None)
    p.add_argument("--range", type=float, nargs=2, default=(-0.1, 0.1),
                   metavar=("LO", "HI"), help="color range (default -0.1 0.1)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("topoplot",
                       help="render topographies from a relevance table")
    p.add_argument("--table", required=True, help="relevance table (TSV)")
    p.add_argument("--out", required=True)
    p.add_argument("--label", default="relevance", help="figure caption")
    p.add_argument("--range", type=float, nargs=2, default=(-0.1, 0.1),
                   metavar=("LO", "HI"))
    p.set_defaults(func=cmd_topoplot)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=getattr(logging, os.environ.get("MI_LRP_LOG", "WARNING").upper(),
                      logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, trialio.FormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except Exception as e:  # noqa: BLE001 - CLI boundary
        log.exception("unexpected failure")
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
