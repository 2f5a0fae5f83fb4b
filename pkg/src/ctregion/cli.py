"""Command-line entry point.

Subcommands mirror the pipeline stages so each artifact can be produced
and inspected on its own, plus `pipeline` to run a study end to end.
Exit codes: 0 success, 1 validation or endpoint failure, 2 malformed or
missing input files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

from . import encoder, pooling, segtokens
from .attributes import PatientAttributes, extract_attributes
from .container import atomic_write_bytes, read_json, write_json
from .errors import EndpointError, InputFormatError, ValidationError
from .llm_bridge import EndpointConfig, generate_all
from .metrics import evaluate_pairs, read_pairs_jsonl, write_scores_csv
from .phantom import DEFAULT_DIMS, DEFAULT_SPACING, phantom_report, write_phantom
from .prompting import (
    build_prompt,
    count_budget_tokens,
    read_prompt_bundle,
    render_attribute_report,
    render_prompt_text,
    write_prompt_bundle,
)
from .regions import REGION_IDS, region_slug
from .reports import (
    StructuredReport,
    merge_reports,
    report_from_json_dict,
    report_to_json_dict,
    split_report,
    split_sentences,
)
from .volume_io import (
    RegionMaskSet,
    load_mask_set,
    load_nifti,
    load_raw_container,
    load_study,
    normalize_minmax,
    resize_mask_set,
    resize_volume,
    save_raw_container,
)

log = logging.getLogger("ctregion.cli")


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    cfg = read_json(path)
    if not isinstance(cfg, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return cfg


def _pick(args, name: str, cfg: dict, default):
    value = getattr(args, name.replace("-", "_"), None)
    if value is not None:
        return value
    if name in cfg:
        return cfg[name]
    return default


def _study_of(manifest_path) -> str | None:
    study = read_json(manifest_path).get("study")
    return str(study) if study is not None else None


def _write_text(path, text: str) -> None:
    atomic_write_bytes(path, (text + "\n").encode("utf-8"))


# ---------------------------------------------------------------------------
# subcommands

def cmd_make_phantom(args) -> int:
    manifest = write_phantom(
        args.out,
        dims=tuple(args.dims),
        spacing=tuple(args.spacing),
        seed=args.seed,
        study=args.study,
    )
    _write_text(Path(args.out) / "report.txt", phantom_report(args.seed))
    print(f"wrote phantom study to {manifest}")
    return 0


def cmd_ingest(args) -> int:
    src = Path(args.source)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if src.suffix == ".json":
        ct, masks = load_study(src)
        study = _study_of(src)
        if args.resize:
            target = tuple(args.resize)
            ct = resize_volume(ct, target)
            masks = resize_mask_set(masks, target)
        if args.normalize:
            ct = normalize_minmax(ct)
        save_raw_container(ct, out / "ct.json")
        manifest: dict = {"ct": "ct.json", "regions": {}, "lesions": {}, "organs": {}}
        if study is not None:
            manifest["study"] = study
        for rid, mask in masks.regions.items():
            name = f"region_{rid}.json"
            save_raw_container(mask, out / name)
            manifest["regions"][str(rid)] = name
        for label, mask in masks.lesions.items():
            name = f"lesion_{label}.json"
            save_raw_container(mask, out / name)
            manifest["lesions"][label] = name
        for label, mask in masks.organs.items():
            name = f"organ_{label}.json"
            save_raw_container(mask, out / name)
            manifest["organs"][label] = name
        write_json(out / "manifest.json", manifest)
        print(f"ingested study: dims {ct.dims}, spacing {ct.spacing}, {len(masks.regions)} regions")
    else:
        vol = load_nifti(src)
        if args.resize:
            vol = resize_volume(vol, tuple(args.resize))
        if args.normalize:
            vol = normalize_minmax(vol)
        save_raw_container(vol, out / "ct.json")
        print(f"ingested volume: dims {vol.dims}, spacing {vol.spacing}, dtype {vol.dtype}")
    return 0


def cmd_encode(args) -> int:
    cfg = _load_config(args.config)
    grid = tuple(_pick(args, "grid", cfg, encoder.DEFAULT_GRID))
    channels = _pick(args, "channels", cfg, encoder.DEFAULT_CHANNELS)
    levels = tuple(_pick(args, "levels", cfg, encoder.DEFAULT_LEVEL_IDS))

    src = Path(args.manifest)
    if src.suffix == ".json" and "regions" in read_json(src):
        ct, _ = load_study(src)
    else:
        ct = load_raw_container(src) if src.suffix == ".json" else load_nifti(src)
    ct = normalize_minmax(ct)
    stack = encoder.stub_encode_volume(ct, grid=grid, C=channels, level_ids=levels)
    encoder.save_feature_stack(stack, args.out, slice_hw=(ct.dims[1], ct.dims[2]))
    print(f"encoded {stack.D} slices x {stack.T} tokens x {stack.C} channels, levels {list(stack.level_ids)}")
    return 0


def cmd_pool(args) -> int:
    masks = load_mask_set(args.manifest)
    features = encoder.load_precomputed_features(args.features)
    seq = pooling.build_token_sequence(
        features, masks, level_id=args.level, study=_study_of(args.manifest)
    )
    pooling.save_token_sequence(seq, args.out)
    slices = ", ".join(f"{rid}:{idx}" for rid, idx in seq.selected_slices)
    print(f"pooled {seq.count} visual tokens ({seq.global_block.shape[0]} global), slices {slices}")
    return 0


def _resolve_weights(args, features, cfg) -> segtokens.ProjectionWeights:
    seed = _pick(args, "seed", cfg, segtokens.DEFAULT_WEIGHTS_SEED)
    spatial_grid = tuple(_pick(args, "spatial-grid", cfg, segtokens.DEFAULT_SPATIAL_GRID))
    if args.weights:
        wpath = Path(args.weights)
        if wpath.exists():
            return segtokens.load_projection_weights(wpath)
        weights = segtokens.make_projection_weights(
            features.C, tuple(features.level_ids), spatial_grid=spatial_grid, seed=seed
        )
        segtokens.save_projection_weights(weights, wpath)
        return weights
    return segtokens.make_projection_weights(
        features.C, tuple(features.level_ids), spatial_grid=spatial_grid, seed=seed
    )


def cmd_segtok(args) -> int:
    cfg = _load_config(args.config)
    masks = load_mask_set(args.manifest)
    features = encoder.load_precomputed_features(args.features)
    selection = pooling.select_region_slices(masks)
    weights = _resolve_weights(args, features, cfg)
    segtoks = segtokens.segmentation_tokens(
        masks, features, selection, weights, study=_study_of(args.manifest)
    )
    segtokens.save_segmentation_tokens(segtoks, args.out)
    positive = sum(1 for e in segtoks.entries if e.positive)
    print(f"wrote {segtoks.token_count} segmentation tokens, {positive}/6 regions positive")
    return 0


def cmd_attrs(args) -> int:
    masks = load_mask_set(args.manifest)
    attrs = extract_attributes(
        masks, connectivity=args.connectivity, voxel_units=args.voxel_units
    )
    write_json(args.out, attrs.to_json_dict())
    print(render_attribute_report(attrs))
    return 0


def cmd_prompt(args) -> int:
    tokens = pooling.load_token_sequence(args.tokens)
    segtoks = segtokens.load_segmentation_tokens(args.seg)
    attrs = PatientAttributes.from_json_dict(read_json(args.attrs))
    attr_text = render_attribute_report(attrs)

    if args.region == "all":
        region_ids = list(REGION_IDS)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        targets = {rid: out_dir / f"prompt_region{rid}.jsonl" for rid in region_ids}
    else:
        rid = int(args.region)
        region_ids = [rid]
        targets = {rid: Path(args.out)}

    for rid in region_ids:
        bundle = build_prompt(tokens, segtoks, attr_text, rid)
        write_prompt_bundle(bundle, targets[rid])
        print(f"region {rid}: {count_budget_tokens(bundle)} tokens -> {targets[rid]}")
    return 0


def cmd_split_report(args) -> int:
    if args.source == "-":
        text = sys.stdin.read()
    else:
        text = Path(args.source).read_text(encoding="utf-8")
    labels = None
    if args.labels:
        labels = [int(x) for x in args.labels.split(",") if x.strip()]
    report = split_report(text, region_labels=labels, study=args.study)
    write_json(args.out, report_to_json_dict(report))
    counts = {rid: len(report.sections[rid]) for rid in sorted(report.sections)}
    print(f"split {report.sentence_count()} sentences across regions {counts}")
    return 0


def cmd_merge_report(args) -> int:
    report = report_from_json_dict(read_json(args.structured))
    text = merge_reports(report, complete=args.complete)
    if args.out == "-":
        print(text)
    else:
        _write_text(args.out, text)
        print(f"wrote merged report to {args.out}")
    return 0


def cmd_eval(args) -> int:
    pairs = read_pairs_jsonl(args.pairs)
    rows, summary = evaluate_pairs(pairs)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_scores_csv(rows, summary, out_dir / "scores.csv")
    write_json(out_dir / "summary.json", summary.to_dict())
    if not args.no_figures:
        from .figures import fig_metrics

        fig_metrics(rows, summary, out_dir / "fig_metrics.png")
    print(
        f"n={summary.count} bleu4={summary.bleu4:.4f} "
        f"rouge_l={summary.rouge_l:.4f} meteor={summary.meteor:.4f}"
    )
    return 0


def cmd_generate(args) -> int:
    config = EndpointConfig(
        url=args.endpoint,
        timeout=args.timeout,
        retries=args.retries,
        backoff_base=args.backoff,
        max_new_tokens=args.max_new_tokens,
        concurrency=args.jobs,
    )
    bundles = [read_prompt_bundle(p) for p in args.prompts]
    completions = generate_all([render_prompt_text(b) for b in bundles], config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for bundle, completion in zip(bundles, completions):
        path = out_dir / f"completion_region{bundle.region_id}.txt"
        _write_text(path, completion)
        print(f"region {bundle.region_id}: {len(completion.split())} words -> {path}")
    return 0


def _pipeline_summary_csv(path, seq, segtoks, masks: RegionMaskSet, budgets: dict[int, int]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["region_id", "region", "selected_slice", "mask_voxels", "positive", "prompt_tokens"])
    selected = dict(seq.selected_slices)
    for entry in segtoks.entries:
        rid = entry.region_id
        writer.writerow(
            [
                rid,
                region_slug(rid),
                selected[rid],
                int(masks.regions[rid].data.sum()),
                int(entry.positive),
                budgets[rid],
            ]
        )
    atomic_write_bytes(path, buf.getvalue().encode("utf-8"))


def cmd_pipeline(args) -> int:
    cfg = _load_config(args.config)
    grid = tuple(_pick(args, "grid", cfg, encoder.DEFAULT_GRID))
    channels = _pick(args, "channels", cfg, encoder.DEFAULT_CHANNELS)
    levels = tuple(_pick(args, "levels", cfg, encoder.DEFAULT_LEVEL_IDS))
    seed = _pick(args, "seed", cfg, segtokens.DEFAULT_WEIGHTS_SEED)
    spatial_grid = tuple(_pick(args, "spatial-grid", cfg, segtokens.DEFAULT_SPATIAL_GRID))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    ct, masks = load_study(args.manifest)
    study = _study_of(args.manifest)
    if args.resize:
        target = tuple(args.resize)
        ct = resize_volume(ct, target)
        masks = resize_mask_set(masks, target)

    features = encoder.stub_encode_volume(
        normalize_minmax(ct), grid=grid, C=channels, level_ids=levels
    )
    selection = pooling.select_region_slices(masks)
    seq = pooling.build_token_sequence(features, masks, study=study)
    pooling.save_token_sequence(seq, out / "tokens.json")

    weights = segtokens.make_projection_weights(
        features.C, tuple(features.level_ids), spatial_grid=spatial_grid, seed=seed
    )
    segtoks = segtokens.segmentation_tokens(masks, features, selection, weights, study=study)
    segtokens.save_segmentation_tokens(segtoks, out / "seg_tokens.json")

    attrs = extract_attributes(masks, connectivity=args.connectivity)
    write_json(out / "attrs.json", attrs.to_json_dict())
    attr_text = render_attribute_report(attrs)
    _write_text(out / "attr_report.txt", attr_text)

    budgets: dict[int, int] = {}
    first_bundle = None
    for rid in REGION_IDS:
        bundle = build_prompt(seq, segtoks, attr_text, rid)
        write_prompt_bundle(bundle, out / f"prompt_region{rid}.jsonl")
        budgets[rid] = count_budget_tokens(bundle)
        if first_bundle is None:
            first_bundle = bundle

    _pipeline_summary_csv(out / "summary.csv", seq, segtoks, masks, budgets)

    if not args.no_figures:
        from .figures import fig_selected_slices, fig_token_budget

        fig_selected_slices(ct, masks, selection, out / "fig_selected_slices.png")
        fig_token_budget(first_bundle, out / "fig_token_budget.png")

    if args.endpoint:
        config = EndpointConfig(
            url=args.endpoint,
            timeout=args.timeout,
            retries=args.retries,
            backoff_base=args.backoff,
            max_new_tokens=args.max_new_tokens,
            concurrency=args.jobs,
        )
        bundles = [read_prompt_bundle(out / f"prompt_region{rid}.jsonl") for rid in REGION_IDS]
        completions = generate_all([render_prompt_text(b) for b in bundles], config)
        sections = {rid: split_sentences(text) for rid, text in zip(REGION_IDS, completions)}
        structured = StructuredReport(sections=sections, study=study)
        write_json(out / "structured.json", report_to_json_dict(structured))
        _write_text(out / "report.txt", merge_reports(structured, complete=True))

    print(
        f"pipeline done: {seq.count} visual tokens, {segtoks.token_count} seg tokens, "
        f"outputs in {out}"
    )
    return 0


# ---------------------------------------------------------------------------
# parser

def _add_endpoint_flags(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--endpoint", required=required, default=None, help="generation endpoint URL")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--retries", type=int, default=3)
    p.add_argument("--backoff", type=float, default=1.0, help="base backoff seconds")
    p.add_argument("--max-new-tokens", type=int, default=512)
    p.add_argument("--jobs", type=int, default=1, help="concurrent requests")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctregion",
        description="Region-focused CT report generation pipeline.",
    )
    parser.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-phantom", help="write a deterministic synthetic study")
    p.add_argument("--out", required=True)
    p.add_argument("--dims", type=int, nargs=3, default=list(DEFAULT_DIMS), metavar=("D", "H", "W"))
    p.add_argument("--spacing", type=float, nargs=3, default=list(DEFAULT_SPACING), metavar=("SZ", "SY", "SX"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--study", default=None)
    p.set_defaults(func=cmd_make_phantom)

    p = sub.add_parser("ingest", help="convert a NIfTI volume or study manifest to raw containers")
    p.add_argument("source", help="study manifest (.json) or NIfTI file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resize", type=int, nargs=3, default=None, metavar=("D", "H", "W"))
    p.add_argument("--normalize", action="store_true", help="min-max normalize the volume")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("encode", help="run the stub encoder over a study's CT volume")
    p.add_argument("manifest", help="study manifest or volume container")
    p.add_argument("--out", required=True, help="feature stack header path (.json)")
    p.add_argument("--grid", type=int, nargs=2, default=None, metavar=("GH", "GW"))
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--levels", type=int, nargs="+", default=None)
    p.add_argument("--config", default=None, help="JSON config with default parameters")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("pool", help="build the global+region visual token sequence")
    p.add_argument("manifest")
    p.add_argument("features", help="feature stack header from encode")
    p.add_argument("--out", required=True)
    p.add_argument("--level", type=int, default=None, help="feature level to pool (default: last)")
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("segtok", help="compute the two segmentation tokens per region")
    p.add_argument("manifest")
    p.add_argument("features")
    p.add_argument("--out", required=True)
    p.add_argument("--weights", default=None, help="projection weights file (created if missing)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--spatial-grid", type=int, nargs=3, default=None, metavar=("GD", "GH", "GW"))
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_segtok)

    p = sub.add_parser("attrs", help="extract organ volumes and lesion statistics")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--connectivity", type=int, choices=(6, 26), default=26)
    p.add_argument("--voxel-units", action="store_true", help="report diameters in voxels")
    p.set_defaults(func=cmd_attrs)

    p = sub.add_parser("prompt", help="assemble region prompts from precomputed artifacts")
    p.add_argument("tokens", help="token sequence header from pool")
    p.add_argument("seg", help="segmentation tokens from segtok")
    p.add_argument("attrs", help="attributes JSON from attrs")
    p.add_argument("--region", default="all", help="region id 1..6 or 'all'")
    p.add_argument("--out", required=True, help="output file (single region) or directory (all)")
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("split-report", help="structure a narrative report by region")
    p.add_argument("source", help="text file, or - for stdin")
    p.add_argument("--out", required=True, help="structured report JSON")
    p.add_argument("--labels", default=None, help="comma-separated per-sentence region ids")
    p.add_argument("--study", default=None)
    p.set_defaults(func=cmd_split_report)

    p = sub.add_parser("merge-report", help="render a structured report as text")
    p.add_argument("structured", help="structured report JSON")
    p.add_argument("--out", required=True, help="output text file, or - for stdout")
    p.add_argument("--complete", action="store_true", help="emit every region, empty ones as Unremarkable")
    p.set_defaults(func=cmd_merge_report)

    p = sub.add_parser("eval", help="score candidate reports against references")
    p.add_argument("pairs", help="JSONL with candidate/reference fields")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", help="send prompt bundles to the generation endpoint")
    p.add_argument("prompts", nargs="+", help="prompt bundle JSONL files")
    p.add_argument("--out-dir", required=True)
    _add_endpoint_flags(p, required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("pipeline", help="run a study end to end")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resize", type=int, nargs=3, default=None, metavar=("D", "H", "W"))
    p.add_argument("--grid", type=int, nargs=2, default=None)
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--levels", type=int, nargs="+", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--spatial-grid", type=int, nargs=3, default=None)
    p.add_argument("--connectivity", type=int, choices=(6, 26), default=26)
    p.add_argument("--config", default=None)
    p.add_argument("--no-figures", action="store_true")
    _add_endpoint_flags(p, required=False)
    p.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InputFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EndpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
