"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 endpoint failure
after retries.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import plotting
from .config import ConfigError, RunConfig, load_config
from .evaluation import (
    EquivalenceDictionary,
    EquivalenceError,
    JudgeError,
    RunDocument,
    bleu4,
    hallucination_rates,
    is_compliant,
    judge_report,
    pcr,
    pearson_agreement,
    per_class_recall,
    rouge_l,
)
from .generation import (
    CallLog,
    CorpusConfigError,
    EndpointError,
    ReportExtractionError,
    Violation,
    build_teacher_corpus,
    extract_json,
    generate_report,
    load_image_detections,
    map_bounded,
    validate_report,
)
from .geometry import GeometryError, tile_plan
from .ingest import ManifestError, ParseError, load_annotations
from .knowledge import EmbeddingError, KnowledgeError, Retriever, build_index, bundled_kb, lexical_embedder, load_kb

EXIT_OK, EXIT_USAGE, EXIT_ENDPOINT = 0, 2, 3
EVAL_MODES = ("text", "recall", "hallucination", "pcr", "judge", "agreement")

log = logging.getLogger("bladeinspect")

_USAGE_ERRORS = (ConfigError, ManifestError, ParseError, FileNotFoundError, GeometryError, KnowledgeError,
                 CorpusConfigError, EquivalenceError, ValueError)
_ENDPOINT_ERRORS = (EndpointError, EmbeddingError)


class UsageError(Exception):
    pass


def _fail(msg: str) -> None:
    raise UsageError(msg)


# --------------------------------------------------------------------------
# shared loading


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    return cfg.with_overrides(
        output_dir=Path(args.out) if getattr(args, "out", None) else None,
        conf_floor=getattr(args, "conf_floor", None),
        raft=True if getattr(args, "raft", False) else None,
    )


def _detections(cfg: RunConfig, images, taxonomy):
    return {
        im.image_id: load_image_detections(cfg.detections_dir, im, taxonomy, cfg.tile_size_px, cfg.tile_overlap,
                                           cfg.iou_threshold)
        for im in images
    }


def _reports_dir(cfg: RunConfig, args) -> Path:
    return Path(args.reports) if getattr(args, "reports", None) else cfg.output_dir / "reports"


def _load_report(path: Path):
    """(report or None, violations for an unusable file)."""
    if not path.exists():
        return None, [Violation("schema_error", f"no report file {path.name}")]
    try:
        return extract_json(path.read_text(encoding="utf-8")), []
    except ReportExtractionError as exc:
        return None, exc.violations()


def _images(cfg: RunConfig, split: str):
    manifest = cfg.manifest()
    images = manifest.split(split)
    if not images:
        _fail(f"manifest has no {split!r} images")
    return manifest, images


def _write_doc(doc: RunDocument, cfg: RunConfig) -> None:
    j, c = doc.write(cfg.output_dir)
    log.info("wrote %s and %s", j, c)


# --------------------------------------------------------------------------
# commands


def cmd_tile_plan(args) -> int:
    plan = tile_plan(args.width, args.height, args.size, args.overlap)
    print(json.dumps(plan.to_dict(), indent=2))
    return EXIT_OK


def cmd_bridge(args) -> int:
    cfg = _config(args)
    manifest = cfg.manifest()
    try:
        image = manifest.get(args.image_id)
    except KeyError:
        _fail(f"image {args.image_id!r} is not in the manifest")
    dets = load_image_detections(cfg.detections_dir, image, manifest.taxonomy, cfg.tile_size_px, cfg.tile_overlap,
                                 cfg.iou_threshold)
    prompt = cfg.bridge().build(dets)
    sys.stdout.write(prompt.rendered + "\n")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = _config(args)
    manifest, images = _images(cfg, args.split)
    gen = cfg.endpoint("generate")
    detections = _detections(cfg, images, manifest.taxonomy)
    kb = cfg.kb()
    bridge = cfg.bridge(kb)
    if bridge.retriever is not None:
        bridge.retriever.check()

    out = cfg.output_dir
    reports = out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    call_log_path = out / "calls.jsonl"
    call_log_path.unlink(missing_ok=True)
    call_log = CallLog(call_log_path)

    def run(im):
        return generate_report(im.image_id, detections[im.image_id], bridge, gen, kb=kb,
                               taxonomy=manifest.taxonomy, corner_tol=cfg.corner_tol, call_log=call_log)

    results = map_bounded(run, images, gen.max_in_flight)
    written = extraction = endpoint = 0
    with (out / "generate_log.jsonl").open("w", encoding="utf-8") as fh:
        for res in results:
            path = reports / f"{res.image_id}.json"
            if res.ok:
                path.write_text(res.report.to_json() + "\n", encoding="utf-8")
                written += 1
            else:
                path.unlink(missing_ok=True)
                if res.error_kind == "extraction":
                    extraction += 1
                else:
                    endpoint += 1
                log.warning("%s: %s", res.image_id, res.error)
            fh.write(json.dumps(res.log_entry(), ensure_ascii=False, sort_keys=True) + "\n")
    violations = sum(len(r.violations) for r in results if r.ok)
    print(f"{written} reports written, {extraction} extraction errors, {endpoint} endpoint failures, "
          f"{violations} violations")
    return EXIT_ENDPOINT if endpoint else EXIT_OK


def cmd_kb_index(args) -> int:
    cfg = _config(args) if args.config else None
    kb = load_kb(args.kb) if args.kb else (cfg.kb() if cfg else bundled_kb())
    provider = cfg.embedder() if cfg else lexical_embedder()
    out = cfg.output_dir if cfg else (Path(args.out) if args.out else None)
    index = build_index(kb, provider)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        np.savez(out / "kb_index.npz", ids=np.array(index.procedure_ids), matrix=index.matrix,
                 embedder_id=np.array(index.embedder_id))
    print(f"{len(index)} records indexed")
    log.info("embedder %s, dimension %d", index.embedder_id, index.dimension)
    return EXIT_OK


def cmd_corpus_teacher(args) -> int:
    cfg = _config(args)
    manifest, images = _images(cfg, "train")
    teacher = cfg.endpoint("teacher")
    detections = _detections(cfg, images, manifest.taxonomy)
    kb = cfg.kb()
    out = cfg.output_dir / "teacher"
    stats = build_teacher_corpus(manifest, detections, cfg.bridge(kb), teacher, out, kb=kb,
                                 corner_tol=cfg.corner_tol)
    print(f"{stats.accepted} accepted, {stats.rejected} rejected")
    if stats.errors:
        log.error("%d teacher calls failed after retries", stats.errors)
        return EXIT_ENDPOINT
    return EXIT_OK


# --------------------------------------------------------------------------
# eval modes


def _reference_text(directory: Path, image_id: str) -> str:
    txt, js = directory / f"{image_id}.txt", directory / f"{image_id}.json"
    if txt.exists():
        return txt.read_text(encoding="utf-8")
    if js.exists():
        return extract_json(js.read_text(encoding="utf-8")).text
    _fail(f"no reference report for {image_id!r} in {directory}")


def eval_text(cfg, args, images, manifest):
    refs_dir = Path(args.references) if args.references else cfg.references_dir
    if refs_dir is None or not refs_dir.is_dir():
        _fail("eval text needs a references directory (config 'references_dir' or --references)")
    reports = _reports_dir(cfg, args)
    rows = []
    for im in images:
        reference = _reference_text(refs_dir, im.image_id)
        report, _ = _load_report(reports / f"{im.image_id}.json")
        candidate = report.text if report is not None else ""
        rows.append({"image_id": im.image_id, "bleu4": bleu4(candidate, [reference]),
                     "rouge_l": rouge_l(candidate, reference), "missing": report is None})
    n = len(rows)
    agg = {"bleu4": sum(r["bleu4"] for r in rows) / n, "rouge_l": sum(r["rouge_l"] for r in rows) / n, "n": n}
    line = f"text: bleu4={agg['bleu4']:.6f} rouge_l={agg['rouge_l']:.6f} n={n}"
    draw = lambda p: plotting.text_metrics_figure([r["bleu4"] for r in rows], [r["rouge_l"] for r in rows], p)
    return rows, agg, line, draw


def eval_recall(cfg, args, images, manifest):
    ann_dir = Path(args.annotations) if args.annotations else cfg.annotations_dir
    if ann_dir is None or not ann_dir.is_dir():
        _fail("eval recall needs an annotations directory (config 'annotations_dir' or --annotations)")
    dictionary = (EquivalenceDictionary.load(cfg.equivalence_path, manifest.taxonomy) if cfg.equivalence_path
                  else EquivalenceDictionary.bundled(manifest.taxonomy))
    truth = load_annotations(ann_dir, manifest, args.split)
    reports = _reports_dir(cfg, args)
    predicted, rows = {}, []
    for ann in truth:
        report, _ = _load_report(reports / f"{ann.image_id}.json")
        mentions = set()
        if report is not None:
            mentions = {d.defect_class for d in report.defects} | dictionary.mentions_in(report.text)
        predicted[ann.image_id] = mentions
        rows.append({"image_id": ann.image_id, "truth": sorted(d.class_label for d in ann.ground_truth),
                     "predicted": sorted(mentions)})
    res = per_class_recall(predicted, truth, dictionary)
    agg = res.to_dict()
    line = "recall: macro={:.6f} ".format(res.macro) + " ".join(f"{c}={v:.6f}" for c, v in res.per_class.items())
    return rows, agg, line, lambda p: plotting.recall_figure(res.per_class, res.macro, p)


def _checked(cfg, args, images, manifest, kb):
    bridge = cfg.bridge(kb, raft=False)
    detections = _detections(cfg, images, manifest.taxonomy)
    reports = _reports_dir(cfg, args)
    out = []
    for im in images:
        evidence = bridge.evidence(detections[im.image_id])
        report, violations = _load_report(reports / f"{im.image_id}.json")
        if report is not None:
            violations = validate_report(report, evidence, kb=kb, corner_tol=cfg.corner_tol,
                                         taxonomy=manifest.taxonomy)
        out.append((im.image_id, report, violations, evidence))
    return out


def eval_hallucination(cfg, args, images, manifest):
    kb = cfg.kb()
    checked = _checked(cfg, args, images, manifest, kb)
    rates = hallucination_rates((rep, v) for _, rep, v, _ in checked)
    rows = [{"image_id": i, "entries": len(rep.defects) if rep else 0, "violation_count": len(v),
             "violations": [x.to_dict() for x in v]} for i, rep, v, _ in checked]
    agg = rates.to_dict()
    agg["reports"] = sum(rep is not None for _, rep, _, _ in checked)
    agg["violations"] = sum(r["violation_count"] for r in rows)
    line = f"hallucination: shr={rates.shr:.6f} hr={rates.hr:.6f} entries={rates.entries} " \
           f"violations={agg['violations']}"
    kinds = [x.kind for _, _, v, _ in checked for x in v]
    return rows, agg, line, lambda p: plotting.violations_figure(kinds, rates.shr, rates.hr, p)


def eval_pcr(cfg, args, images, manifest):
    kb = cfg.kb()
    retriever = Retriever(kb, cfg.embedder())
    reports = _reports_dir(cfg, args)
    pairs, rows = [], []
    by_class = defaultdict(lambda: [0, 0])
    for im in images:
        report, _ = _load_report(reports / f"{im.image_id}.json")
        if report is None:
            rows.append({"image_id": im.image_id, "entries": 0, "compliant": 0, "missing": True})
            continue
        retrieved = [retriever.lookup(d.defect_class)[0] for d in report.defects]
        pairs.append((report, retrieved))
        flags = [is_compliant(d, r) for d, r in zip(report.defects, retrieved)]
        for d, ok in zip(report.defects, flags):
            by_class[d.defect_class][0] += ok
            by_class[d.defect_class][1] += 1
        rows.append({"image_id": im.image_id, "entries": len(flags), "compliant": sum(flags), "missing": False})
    res = pcr(pairs)
    line = f"pcr: pcr={res.pcr:.6f} compliant={res.compliant} entries={res.entries}"
    return rows, res.to_dict(), line, lambda p: plotting.pcr_figure({k: tuple(v) for k, v in by_class.items()},
                                                                     res.pcr, p)


def eval_judge(cfg, args, images, manifest):
    judge = cfg.endpoint("judge")
    kb = cfg.kb()
    checked = _checked(cfg, args, images, manifest, kb)

    def score(item):
        image_id, report, _, evidence = item
        if report is None:
            return {"image_id": image_id, "error": "no usable report"}
        try:
            s = judge_report(report, evidence, judge)
        except JudgeError as exc:
            return {"image_id": image_id, "error": str(exc)}
        return {"image_id": image_id, **s.to_dict()}

    rows = map_bounded(score, checked, judge.max_in_flight)
    scored = [r for r in rows if "mean" in r]
    if not scored:
        _fail("judge produced no usable scores")
    axes = ("factuality", "domain_alignment", "actionability", "mean")
    agg = {a: sum(r[a] for r in scored) / len(scored) for a in axes}
    agg["n"] = len(scored)
    line = "judge: " + " ".join(f"{a}={agg[a]:.6f}" for a in axes) + f" n={len(scored)}"
    return rows, agg, line, lambda p: plotting.judge_figure(scored, p)


def _score_map(path: Path) -> dict[str, float] | list[float]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        _fail(f"score file not found: {path}")
    except json.JSONDecodeError as exc:
        _fail(f"score file {path} is not JSON: {exc}")
    if isinstance(data, dict) and "per_image" in data:
        return {r["image_id"]: float(r["mean"]) for r in data["per_image"] if "mean" in r}
    if isinstance(data, dict):
        return {k: float(v) for k, v in data.items()}
    if isinstance(data, list):
        return [float(v) for v in data]
    _fail(f"unrecognised score file layout in {path}")


def eval_agreement(cfg, args, images, manifest):
    if not (args.a and args.b):
        _fail("eval agreement needs --a and --b score files")
    a, b = _score_map(Path(args.a)), _score_map(Path(args.b))
    if isinstance(a, dict) and isinstance(b, dict):
        ids = [k for k in a if k in b]
        xs, ys = [a[k] for k in ids], [b[k] for k in ids]
    elif isinstance(a, list) and isinstance(b, list):
        ids, xs, ys = [str(i) for i in range(len(a))], a, b
    else:
        _fail("score files must both be keyed by image id or both be plain lists")
    res = pearson_agreement(xs, ys)
    rows = [{"image_id": i, "a": x, "b": y} for i, x, y in zip(ids, xs, ys)]
    ci = "n/a" if res.ci_low is None else f"[{res.ci_low:.3f}, {res.ci_high:.3f}]"
    line = f"agreement: r={res.r:.6f} ci95={ci} n={res.n}"
    return rows, res.to_dict(), line, lambda p: plotting.agreement_figure(xs, ys, res.r, (res.ci_low, res.ci_high), p)


_EVAL = {
    "text": eval_text,
    "recall": eval_recall,
    "hallucination": eval_hallucination,
    "pcr": eval_pcr,
    "judge": eval_judge,
    "agreement": eval_agreement,
}


def cmd_eval(args) -> int:
    cfg = _config(args)
    if args.mode == "agreement":
        manifest, images = None, []
    else:
        manifest, images = _images(cfg, args.split)
    rows, agg, line, draw = _EVAL[args.mode](cfg, args, images, manifest)
    doc = RunDocument(args.mode, rows, agg)
    _write_doc(doc, cfg)
    if not args.no_figures:
        draw(cfg.output_dir / f"eval_{args.mode}.png")
    print(line)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bladeinspect", description="Blade inspection detection-to-report pipeline.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tile-plan", help="print the sliding-window tile plan as JSON")
    t.add_argument("width", type=int)
    t.add_argument("height", type=int)
    t.add_argument("size", type=int)
    t.add_argument("overlap", type=float)
    t.set_defaults(func=cmd_tile_plan)

    def with_config(sp, out=True):
        sp.add_argument("--config", required=True, help="run configuration JSON")
        if out:
            sp.add_argument("--out", help="output directory (overrides config output_dir)")

    b = sub.add_parser("bridge", help="print the assembled prompt for one image")
    with_config(b, out=False)
    b.add_argument("image_id")
    b.add_argument("--raft", action="store_true", help="append the top-1 retrieved procedure to each block")
    b.add_argument("--conf-floor", type=float)
    b.set_defaults(func=cmd_bridge)

    g = sub.add_parser("generate", help="generate and validate one report per image of a split")
    with_config(g)
    g.add_argument("--split", default="test", choices=("train", "val", "test"))
    g.add_argument("--raft", action="store_true")
    g.add_argument("--conf-floor", type=float)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("eval", help="score stored reports")
    e.add_argument("mode", choices=EVAL_MODES)
    with_config(e)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--reports", help="directory of <image_id>.json reports (default <out>/reports)")
    e.add_argument("--references", help="reference reports directory for 'text'")
    e.add_argument("--annotations", help="ground-truth directory for 'recall'")
    e.add_argument("--a", help="first judge score file for 'agreement'")
    e.add_argument("--b", help="second judge score file for 'agreement'")
    e.add_argument("--no-figures", action="store_true", help="skip PNG output")
    e.set_defaults(func=cmd_eval)

    k = sub.add_parser("kb-index", help="embed and index the knowledge base")
    k.add_argument("--config")
    k.add_argument("--kb", help="knowledge base JSON (default: config kb, else the bundled one)")
    k.add_argument("--out")
    k.set_defaults(func=cmd_kb_index)

    c = sub.add_parser("corpus-teacher", help="build the teacher prompt/report corpus for the training split")
    with_config(c)
    c.set_defaults(func=cmd_corpus_teacher)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except _ENDPOINT_ERRORS as exc:
        print(f"error: endpoint failure: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
