"""Command-line surface.

Subcommands wrap the library one-to-one: generate, heatmap, mask, optimize,
dataset, filter, eval, serve. Results go to stdout as JSON (eval prints its
table); failures exit nonzero with a machine-readable JSON error on stderr;
usage errors exit 2.

The backend id resolves in order: --backend flag, OVAM_BACKEND environment
variable, config file, default ``toy``. The optional --config JSON file may
hold::

    {
      "backend": "toy",
      "defaults": {"prompt": {"tau": 0.4, "alpha": 0.85},
                   "token":  {"tau": 0.8, "alpha": 0.95}},
      "crf": {"gaussian_weight": 3.0, "gaussian_sxy": 3.0,
              "bilateral_weight": 10.0, "bilateral_sxy": 80.0,
              "bilateral_srgb": 13.0, "iterations": 5,
              "unary_confidence": 0.9, "max_pixels": 6400},
      "selection": {"blocks": ["cross_r1"], "timesteps": "all", "heads": [0]}
    }
"""
import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backends import get_backend
from .crf import CrfParams, DenseCrfRefiner, get_refiner
from .dataset import (
    DEFAULT_TEMPLATE,
    PromptSource,
    build_prompts,
    generate_dataset,
    load_manifest,
    save_manifest,
)
from .errors import OvamError
from .filters import area_filter, clip_filter
from .heatmaps import SelectionConfig, compute_ovam, export_heatmap, heatmap_stats
from .masks import BinarizationParams, make_pseudo_mask, save_mask
from .metrics import evaluate_dataset, render_table
from .optimizer import OptimizerConfig, TrainingPair, optimize_tokens
from .tokens import init_attribution_tokens, load_token_file, save_token_file
from .trace_io import load_trace, save_trace

DEFAULT_BACKEND = "toy"


def _load_config(path):
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _resolve_backend(args, config):
    name = args.backend or os.environ.get("OVAM_BACKEND") \
        or config.get("backend") or DEFAULT_BACKEND
    return get_backend(name)


def _parse_selection(args, config):
    section = dict(config.get("selection", {}))
    blocks = args.blocks.split(",") if getattr(args, "blocks", None) else section.get("blocks")
    heads_raw = getattr(args, "heads", None) or section.get("heads")
    if isinstance(heads_raw, str):
        heads_raw = heads_raw.split(",")
    heads = tuple(int(h) for h in heads_raw) if heads_raw else None
    spec = getattr(args, "timesteps", None) or section.get("timesteps") or "all"
    if spec == "all":
        mode, pivot = "all", None
    else:
        mode, _, pivot = spec.partition(":")
        if mode not in ("single", "early", "late") or not pivot:
            raise OvamError(
                f"bad --timesteps {spec!r}; use all|single:T|early:T|late:T")
        pivot = int(pivot)
    return SelectionConfig(blocks=tuple(blocks) if blocks else None,
                           timestep_mode=mode, timestep_pivot=pivot, heads=heads)


def _attribution(args, backend):
    """Resolve (tokens, index, optimized?) from --prompt/--token-file flags."""
    if getattr(args, "token_file", None):
        matrix, _ = load_token_file(args.token_file)
        index = args.token_index if args.token_index is not None \
            else min(1, matrix.n_tokens - 1)
        return matrix, index, True
    if not getattr(args, "prompt", None):
        raise OvamError("provide --prompt or --token-file")
    matrix = backend.encode_text(args.prompt)
    index = args.token_index if args.token_index is not None else 1
    if not 0 <= index < matrix.n_tokens:
        raise OvamError(
            f"token index {index} out of range for {matrix.n_tokens} tokens "
            f"{matrix.token_labels}")
    return matrix, index, False


def _binarization_params(args, config, optimized):
    kind = "token" if optimized else "prompt"
    defaults = BinarizationParams.for_optimized_token() if optimized \
        else BinarizationParams.for_prompt()
    section = config.get("defaults", {}).get(kind, {})
    tau = args.tau if args.tau is not None else section.get("tau", defaults.tau)
    alpha = args.alpha if args.alpha is not None else section.get("alpha", defaults.alpha)
    return BinarizationParams(
        tau=tau, alpha=alpha,
        use_self_attention=not args.no_self_attention,
        use_crf=not args.no_crf)


def _refiner(args, config):
    crf_cfg = config.get("crf")
    if getattr(args, "refiner", None) == "identity":
        return get_refiner("identity")
    if crf_cfg:
        return DenseCrfRefiner(CrfParams(**crf_cfg))
    return None  # make_pseudo_mask falls back to the default dense refiner


def _emit(payload):
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_generate(args, config):
    backend = _resolve_backend(args, config)
    trace = backend.generate_with_trace(args.prompt, args.seed, args.steps)
    out = save_trace(trace, args.out)
    _emit({"trace": str(out), "image": str(Path(out) / "image.png"),
           "seed": args.seed, "timesteps": list(trace.timesteps)})
    return 0


def cmd_heatmap(args, config):
    backend = _resolve_backend(args, config)
    trace = load_trace(args.trace)
    tokens, index, _ = _attribution(args, backend)
    sel = _parse_selection(args, config)
    heat = compute_ovam(trace, tokens, sel)
    paths = export_heatmap(heat, index, args.out)
    stats = heatmap_stats(heat.channel(index), args.tau)
    _emit({**paths, "stats": stats, "token_label": heat.token_labels[index],
           "slice_count": heat.slice_count})
    return 0


def cmd_mask(args, config):
    backend = _resolve_backend(args, config)
    trace = load_trace(args.trace)
    tokens, index, optimized = _attribution(args, backend)
    params = _binarization_params(args, config, optimized)
    mask = make_pseudo_mask(trace, tokens, index, params,
                            sel=_parse_selection(args, config),
                            refiner=_refiner(args, config),
                            threshold_at_latent=args.threshold_at_latent)
    out = Path(args.out)
    if out.suffix != ".png":
        out = out / "mask.png"
    save_mask(mask, out, params)
    _emit({"mask": str(out), "sidecar": str(out.with_suffix(".json")),
           "area_fraction": mask.area_fraction, "tau": params.tau,
           "alpha": params.alpha})
    return 0


def cmd_optimize(args, config):
    backend = _resolve_backend(args, config)
    pairs = []
    for spec in args.image_pair:
        trace_dir, _, gt_path = spec.partition(":")
        if not gt_path:
            raise OvamError(
                f"bad --image-pair {spec!r}; expected TRACE_DIR:GT_PNG")
        trace = load_trace(trace_dir)
        from PIL import Image
        cls = np.asarray(Image.open(gt_path).convert("L")) > 0
        if cls.shape != (trace.image_h, trace.image_w):
            raise OvamError(
                f"annotation {gt_path} is {cls.shape}, trace image is "
                f"{(trace.image_h, trace.image_w)}")
        gt = np.stack([(~cls).astype(float), cls.astype(float)])
        pairs.append(TrainingPair(trace, gt))
    init = init_attribution_tokens(args.class_name, backend)
    cfg = OptimizerConfig(learning_rate=args.lr, decay_factor=args.decay_factor,
                          decay_every=args.decay_every, epochs=args.epochs,
                          selection=_parse_selection(args, config))
    result = optimize_tokens(pairs, init, cfg)
    out = save_token_file(
        args.out, result.best_tokens, backend.backend_id, args.class_name,
        training={
            "best_loss": result.best_loss,
            "best_epoch": result.best_epoch,
            "epochs": cfg.epochs,
            "learning_rate": cfg.learning_rate,
            "decay_factor": cfg.decay_factor,
            "decay_every": cfg.decay_every,
            "initial_loss": result.loss_history[0],
            "pairs": len(pairs),
        })
    (Path(out) / "loss_history.json").write_text(
        json.dumps(list(result.loss_history)) + "\n", encoding="utf-8")
    _emit({"token": str(out), "best_loss": result.best_loss,
           "best_epoch": result.best_epoch,
           "initial_loss": result.loss_history[0]})
    return 0


def cmd_dataset(args, config):
    backend = _resolve_backend(args, config)
    classes = tuple(args.classes.split(","))
    src = PromptSource(
        kind="captions" if args.captions else "template",
        template=args.template,
        caption_file=args.captions,
        classes=classes,
        per_class_count=args.per_class,
        seed_base=args.seed_base,
        synonyms=config.get("synonyms", {}),
    )
    jobs = build_prompts(src)
    tokens_by_class = {}
    for item in (args.tokens.split(",") if args.tokens else []):
        cls, _, path = item.partition("=")
        if not path:
            raise OvamError(f"bad --tokens item {item!r}; expected class=TOKEN_DIR")
        tokens_by_class[cls] = path
    params = _binarization_params(args, config, optimized=bool(tokens_by_class))
    manifest = generate_dataset(
        backend, jobs, tokens_by_class, params, args.out,
        attribution_template=args.template, sel=_parse_selection(args, config),
        num_timesteps=args.steps, refiner=_refiner(args, config),
        workers=args.workers)
    _emit({"out": args.out, "entries": len(manifest.entries),
           "kept": len(manifest.kept_entries()),
           "failures": len(manifest.failures)})
    return 0


def cmd_filter(args, config):
    manifest = load_manifest(args.dataset)
    if not manifest.entries:
        raise OvamError(f"no manifest entries under {args.dataset}")
    if args.kind == "clip":
        scorer = _load_scorer(args.scorer)
        manifest = clip_filter(manifest, scorer, keep_fraction=args.keep_fraction,
                               prompt_template=args.template, root=args.dataset)
    else:
        manifest = area_filter(manifest, low=args.low, high=args.high)
    save_manifest(manifest, args.dataset)
    from .dataset import write_lists
    write_lists(manifest, args.dataset)
    _emit({"out": args.dataset, "entries": len(manifest.entries),
           "kept": len(manifest.kept_entries()),
           "filters": manifest.filters})
    return 0


def _load_scorer(spec):
    if spec == "clip":
        from .filters import ClipSimilarityScorer
        return ClipSimilarityScorer()
    if ":" in spec:
        import importlib

        module_name, _, attr = spec.partition(":")
        obj = getattr(importlib.import_module(module_name), attr)
        return obj() if callable(obj) and not hasattr(obj, "score") else obj
    raise OvamError(f"unknown scorer {spec!r}; use 'clip' or 'module:attr'")


def cmd_eval(args, config):
    manifest = load_manifest(args.dataset)
    classes = args.classes.split(",") if args.classes else \
        sorted({e.class_name for e in manifest.entries})
    report = evaluate_dataset(manifest, args.gt, classes, root=args.dataset)
    print(render_table(report, classes))
    if args.json:
        Path(args.json).write_text(report.to_json(), encoding="utf-8")
    return 1 if report.missing else 0


def cmd_serve(args, config):
    import uvicorn

    from .service import create_app

    backend = _resolve_backend(args, config)
    app = create_app(backend=backend, workdir=args.workdir, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ovam",
        description="Open-vocabulary attention heatmaps, token optimization "
                    "and pseudo-mask datasets.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="JSON config file")
    sub = parser.add_subparsers(dest="command", required=True)

    def common_backend(p):
        p.add_argument("--backend", help="backend id (default: toy; "
                                         "OVAM_BACKEND overrides)")

    def common_selection(p):
        p.add_argument("--blocks", help="comma-separated cross block ids")
        p.add_argument("--timesteps", help="all|single:T|early:T|late:T")
        p.add_argument("--heads", help="comma-separated head indices")

    def common_attribution(p):
        p.add_argument("--prompt", help="attribution prompt text")
        p.add_argument("--token-file", help="optimized token directory")
        p.add_argument("--token-index", type=int,
                       help="token row to use (default: 1)")

    p = sub.add_parser("generate", help="run one generation, save the trace")
    common_backend(p)
    p.add_argument("--prompt", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--steps", type=int, help="denoising steps (backend default)")
    p.add_argument("--out", required=True, help="trace directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("heatmap", help="attribution heatmap from a saved trace")
    common_backend(p)
    common_selection(p)
    common_attribution(p)
    p.add_argument("--trace", required=True)
    p.add_argument("--tau", type=float, default=0.4,
                   help="threshold used for the area statistic")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("mask", help="binary pseudo-mask from a saved trace")
    common_backend(p)
    common_selection(p)
    common_attribution(p)
    p.add_argument("--trace", required=True)
    p.add_argument("--tau", type=float, help="peak-relative threshold "
                   "(default 0.4 for prompts, 0.8 for token files)")
    p.add_argument("--alpha", type=float, help="self-attention floor "
                   "(default 0.85 for prompts, 0.95 for token files)")
    p.add_argument("--no-self-attention", action="store_true")
    p.add_argument("--no-crf", action="store_true")
    p.add_argument("--refiner", choices=["dense", "identity"])
    p.add_argument("--threshold-at-latent", action="store_true")
    p.add_argument("--out", required=True, help="mask png path or directory")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("optimize", help="train an attribution token")
    common_backend(p)
    common_selection(p)
    p.add_argument("--image-pair", action="append", required=True,
                   metavar="TRACE_DIR:GT_PNG",
                   help="training pair; repeatable")
    p.add_argument("--class", dest="class_name", required=True)
    p.add_argument("--lr", type=float, default=100.0)
    p.add_argument("--decay-factor", type=float, default=0.7)
    p.add_argument("--decay-every", type=int, default=120)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--out", required=True, help="token directory")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("dataset", help="generate a synthetic dataset")
    common_backend(p)
    common_selection(p)
    p.add_argument("--classes", required=True, help="comma-separated classes")
    p.add_argument("--per-class", type=int, default=1)
    p.add_argument("--template", default=DEFAULT_TEMPLATE)
    p.add_argument("--captions", help="caption NDJSON file (caption mode)")
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--steps", type=int)
    p.add_argument("--tokens", help="class=TOKEN_DIR[,class=TOKEN_DIR...]")
    p.add_argument("--tau", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--no-self-attention", action="store_true")
    p.add_argument("--no-crf", action="store_true")
    p.add_argument("--refiner", choices=["dense", "identity"])
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("filter", help="apply dataset filters")
    p.add_argument("--dataset", required=True)
    p.add_argument("--kind", choices=["clip", "area"], required=True)
    p.add_argument("--keep-fraction", type=float, default=0.7)
    p.add_argument("--template", default=DEFAULT_TEMPLATE)
    p.add_argument("--scorer", default="clip",
                   help="'clip' or 'module:attr' plugin path")
    p.add_argument("--low", type=float, default=0.05)
    p.add_argument("--high", type=float, default=0.95)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("eval", help="score pseudo-masks against ground truth")
    p.add_argument("--dataset", required=True, help="dataset dir with manifest")
    p.add_argument("--gt", required=True, help="ground-truth mask directory")
    p.add_argument("--classes", help="comma-separated class list")
    p.add_argument("--json", help="also write the report as JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP service")
    common_backend(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--workdir", default="ovam-workdir")
    p.add_argument("--ui", help="static UI directory to mount at /ui")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except OvamError as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr)
        sys.stderr.write("\n")
        return 1
    except (OSError, ValueError, KeyError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)},
                  sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
