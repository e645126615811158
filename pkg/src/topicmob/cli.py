"""Command line pipeline: preprocess -> lda-fit -> tree-fit -> validate -> report.

Every stage reads its inputs from, and writes its artifacts to, ``--out-dir``.
Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .config import PipelineConfig
from .corpus import (
    DocTermCounts,
    Vocabulary,
    build_vocabulary,
    load_reports,
    load_stoplist,
    preprocess as preprocess_text,
    reports_frame,
    to_counts,
)
from .exceptions import ConfigError, DataError, NumericalError
from .lda import LdaModel, fit_lda, topic_terms
from .mob.tree import Tree, TreeConfig, grow, infer_candidates, render_tree, segment_table
from .validate import (
    ResamplePlan,
    fit_diagnostics,
    parameter_stability,
    residual_acf,
    run_stability,
    stability_summary,
)

logger = logging.getLogger("topicmob")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

VOCAB_FILE = "vocab.json"
COUNTS_FILE = "counts.jsonl"
MODEL_FILE = "model.json"
ASSIGN_FILE = "assignments.csv"
TERMS_FILE = "topic_terms.csv"
TREE_FILE = "tree.json"
SEGMENTS_FILE = "segments.csv"
STABILITY_FILE = "stability.csv"
SUMMARY_FILE = "summary.json"
PARAMS_FILE = "parameters.csv"
ACF_FILE = "acf.csv"
DIAG_FILE = "diagnostics.csv"
REPORT_FILE = "report.md"


def _out(cfg: PipelineConfig) -> Path:
    path = Path(cfg.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise DataError(f"missing artifact {path}; run `topicmob {stage}` first")
    return path


def _reports(cfg: PipelineConfig):
    levels = {k: (None if v is None else frozenset(s.upper() for s in v)) for k, v in cfg.levels.items()}
    try:
        return load_reports(cfg.input, cfg.input_format, cfg.column_map, levels)
    except FileNotFoundError:
        raise DataError(f"input file not found: {cfg.input}") from None


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# stages


def run_preprocess(cfg: PipelineConfig) -> dict:
    reports = _reports(cfg)
    if not reports:
        raise DataError("input has no reports")
    stop = load_stoplist(cfg.stoplist)
    tokens = [preprocess_text(r.summary, stop) for r in reports]
    vocab = build_vocabulary(tokens, cfg.min_count)
    docs = [to_counts(t, vocab, r.id) for t, r in zip(tokens, reports)]
    out = _out(cfg)
    (out / VOCAB_FILE).write_text(vocab.to_json() + "\n", encoding="utf-8")
    with (out / COUNTS_FILE).open("w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(json.dumps(d.to_dict(), separators=(",", ":")) + "\n")
    stats = {"documents": len(docs), "vocabulary": vocab.size, "empty_documents": sum(d.is_empty for d in docs)}
    print(f"documents: {stats['documents']}  vocabulary: {stats['vocabulary']}  empty: {stats['empty_documents']}")
    return stats


def _load_docs(out: Path) -> tuple[Vocabulary, list[DocTermCounts]]:
    vocab = Vocabulary.from_json(_need(out / VOCAB_FILE, "preprocess").read_text(encoding="utf-8"))
    docs = []
    with _need(out / COUNTS_FILE, "preprocess").open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                docs.append(DocTermCounts.from_dict(json.loads(line)))
    return vocab, docs


def run_lda_fit(cfg: PipelineConfig) -> LdaModel:
    out = _out(cfg)
    vocab, docs = _load_docs(out)
    lda_seed, _ = cfg.stage_seeds()
    model, posts = fit_lda(
        docs, cfg.topics, cfg.kappa, cfg.lda_tol, cfg.lda_max_iter, seed=lda_seed, q=vocab.size
    )
    (out / MODEL_FILE).write_text(model.to_json() + "\n", encoding="utf-8")
    _write_csv(
        out / ASSIGN_FILE,
        ["doc_id", "hard_topic", "max_pi"],
        ([p.doc_id, p.hard_topic, repr(p.max_pi)] for p in posts),
    )
    used = sorted({p.hard_topic for p in posts})
    rows = []
    for t in used:
        terms, ndoc = topic_terms(model, docs, posts, t, 10, vocab)
        cells = [f"{term} ({freq})" for term, freq in terms]
        rows.append([t, ndoc] + cells + [""] * (10 - len(cells)))
    _write_csv(out / TERMS_FILE, ["topic", "numberDOC"] + [f"term_{i}" for i in range(1, 11)], rows)
    print(f"topics: {model.s}  used: {len(used)}  EM iterations: {len(model.elbo_trace)}  ELBO: {model.elbo_trace[-1]:.4f}")
    return model


def design_frame(cfg: PipelineConfig, out: Path | None = None):
    """Split-candidate frame, target and report dates aligned on report id."""
    reports = _reports(cfg)
    frame = reports_frame(reports)
    cols = list(cfg.candidates)
    for c in cols:
        if c not in frame.columns:
            raise ConfigError(f"candidate {c!r} is not a report column")
    X = frame[cols].copy()
    if "date" in cols:
        X["date"] = pd.to_datetime(X["date"]).map(lambda d: d.toordinal() if pd.notna(d) else np.nan)
    if cfg.use_topics:
        out = out or Path(cfg.out_dir)
        assign = pd.read_csv(_need(out / ASSIGN_FILE, "lda-fit"), dtype={"doc_id": str}).set_index("doc_id")
        missing = set(X.index) - set(assign.index)
        if missing:
            raise DataError(f"{len(missing)} reports have no topic assignment (e.g. {sorted(missing)[:3]})")
        labels = assign.loc[X.index, "hard_topic"].to_numpy()
        for t in sorted(set(labels.tolist())):
            X[f"topic_{t}"] = (labels == t).astype(np.int8)
    return X, frame["y"].to_numpy(), frame["date"]


def _tree_config(cfg: PipelineConfig) -> TreeConfig:
    return TreeConfig(alpha=cfg.alpha, min_segment=cfg.min_segment, max_depth=cfg.max_depth)


def run_tree_fit(cfg: PipelineConfig) -> Tree:
    out = _out(cfg)
    X, y, _ = design_frame(cfg, out)
    ordered = [c for c in cfg.ordered if c in X.columns] + (["date"] if "date" in X.columns else [])
    candidates = infer_candidates(X, ordered=ordered)
    tree = grow(X.reset_index(drop=True), y, candidates, _tree_config(cfg))
    (out / TREE_FILE).write_text(tree.to_json() + "\n", encoding="utf-8")
    rows = segment_table(tree)
    _write_csv(out / SEGMENTS_FILE, rows[0].CSV_HEADER, (r.csv_row() for r in rows))
    print(f"segments: {tree.n_segments}  (n={tree.n}, min_segment={tree.min_segment})")
    return tree


def _load_tree(out: Path) -> Tree:
    return Tree.from_json(_need(out / TREE_FILE, "tree-fit").read_text(encoding="utf-8"))


def run_validate(cfg: PipelineConfig) -> dict:
    out = _out(cfg)
    tree = _load_tree(out)
    X, y, dates = design_frame(cfg, out)
    X = X.reset_index(drop=True)
    _, seed = cfg.stage_seeds()
    v = cfg.validation
    plans = [
        ResamplePlan(scheme=s, B=v.B, fraction=v.fraction, seed=seed, alpha=v.alpha, min_segment=v.min_segment)
        for s in v.schemes
    ]
    matches = run_stability(X, y, tree, plans, n_jobs=cfg.threads)
    if not matches:
        raise NumericalError("every resampled tree failed to fit")
    _write_csv(
        out / STABILITY_FILE,
        ["b", "scheme", "k", "l", "jaccard", "log_mu_l", "theta_l"],
        ([m.b, m.scheme, m.k, m.l, repr(m.jaccard), repr(m.log_mu), repr(m.theta)] for m in matches),
    )
    summary = stability_summary(matches)
    params = parameter_stability(matches)
    for k, p in params.items():
        summary["segments"][str(k)]["median_log_mu"] = p["median_log_mu"]
        summary["segments"][str(k)]["median_theta"] = p["median_theta"]
    (out / SUMMARY_FILE).write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    _write_csv(
        out / PARAMS_FILE,
        ["k", "b", "scheme", "log_mu_l", "theta_l"],
        ([m.k, m.b, m.scheme, repr(m.log_mu), repr(m.theta)] for m in matches),
    )
    acf = residual_acf(tree, X, y, dates.to_numpy(), v.max_lag) if dates.notna().all() else []
    if not dates.notna().all():
        logger.warning("some reports lack a date; residual autocorrelation skipped")
    _write_csv(
        out / ACF_FILE,
        ["segment", "n", "lag", "acf", "band"],
        ([a.segment, a.n, h, repr(r), repr(a.band)] for a in acf for h, r in enumerate(a.acf, start=1)),
    )
    fit_diagnostics(tree, X, y).to_csv(out / DIAG_FILE, index=False)
    pooled = summary["pooled"]
    print(
        f"resamples: {summary['n_resamples']}  coinciding: {100 * pooled['coinciding']:.1f}%  "
        f"strongly corresponding: {100 * pooled['strongly_corresponding']:.1f}%"
    )
    return summary


def _md_table(header, rows) -> str:
    lines = ["| " + " | ".join(map(str, header)) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(map(str, r)) + " |" for r in rows]
    return "\n".join(lines)


def run_report(cfg: PipelineConfig) -> str:
    out = Path(cfg.out_dir)
    tree = _load_tree(out)
    seg = pd.read_csv(_need(out / SEGMENTS_FILE, "tree-fit"))
    parts = [
        "# Segmentation report",
        "",
        f"r = {tree.n_segments} segments from n = {tree.n} reports "
        f"(alpha = {tree.config.alpha:g}, minimum segment size = {tree.min_segment}).",
        "",
        "## Tree",
        "",
        "```",
        render_tree(tree),
        "```",
        "",
        "## Segments",
        "",
    ]
    seg_rows = [
        [int(r.segment), f"{r.log_mu:.3f}", f"{math.exp(r.log_mu):.3f}", f"{r.se_log_mu:.3f}", f"{r.theta:.3f}",
         f"{r.se_theta:.3f}", int(r.df), f"{r.dev:.2f}", int(r["max"]), f"{r.pct_zero:.1f}"]
        for _, r in seg.iterrows()
    ]
    parts.append(_md_table(["segment", "log mu", "mu", "se(log mu)", "theta", "se(theta)", "df", "dev", "max", "%zero"], seg_rows))
    terms_path = out / TERMS_FILE
    if terms_path.exists():
        split_topics = {
            int(n.split.variable.split("_", 1)[1])
            for n in tree.nodes()
            if not n.is_leaf and n.split.variable.startswith("topic_")
        }
        terms = pd.read_csv(terms_path, dtype=str, keep_default_na=False)
        terms = terms[terms["topic"].astype(int).isin(split_topics)]
        parts += ["", "## Topics used in splits", ""]
        if len(terms):
            parts.append(_md_table(list(terms.columns), terms.itertuples(index=False)))
        else:
            parts.append("No topic variable was selected for splitting.")
    summary_path = out / SUMMARY_FILE
    if summary_path.exists():
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
        pooled = summary["pooled"]
        parts += [
            "",
            "## Stability",
            "",
            f"{summary['n_resamples']} resamples; {100 * pooled['coinciding']:.1f}% coinciding segments, "
            f"{100 * pooled['strongly_corresponding']:.1f}% strongly corresponding (Jaccard >= 0.8).",
            "",
            _md_table(
                ["segment", "median Jaccard", "q1", "q3", "median log mu"],
                (
                    [k, f"{s['median']:.3f}", f"{s['q1']:.3f}", f"{s['q3']:.3f}", f"{s.get('median_log_mu', float('nan')):.3f}"]
                    for k, s in summary["segments"].items()
                ),
            ),
        ]
    text = "\n".join(parts) + "\n"
    (out / REPORT_FILE).write_text(text, encoding="utf-8")
    print(text)
    return text


STAGES = {
    "preprocess": run_preprocess,
    "lda-fit": run_lda_fit,
    "tree-fit": run_tree_fit,
    "validate": run_validate,
    "report": run_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="pipeline configuration (JSON)")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker cap for resampling")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="artifact directory")
    common.add_argument("--input", default=argparse.SUPPRESS, help="report table (CSV or JSONL)")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="topicmob", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if getattr(args, "verbose", 0) > 1 else logging.INFO if getattr(args, "verbose", 0) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = PipelineConfig.load(args.config) if hasattr(args, "config") else PipelineConfig()
        for opt, attr in (("seed", "seed"), ("threads", "threads"), ("out_dir", "out_dir"), ("input", "input")):
            if hasattr(args, opt):
                setattr(cfg, attr, getattr(args, opt))
        cfg.check()
        STAGES[args.command](cfg)
    except ConfigError as exc:
        print(f"topicmob: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"topicmob: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"topicmob: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"topicmob: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
