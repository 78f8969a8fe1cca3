"""Command-line entry point for the label-refinement pipeline.

Subcommands:
    run                 full pipeline: seed, train, select, predict, score
    ablate              run a base config plus named single-change variants
    gen-synthetic       write a synthetic cluster dataset
    evaluate            score an existing predictions file
    inspect-embeddings  validate and describe an embedding file

Relative output directories resolve under $C2F_OUTPUT_ROOT when it is set.
Failures write a machine-readable ``error.json`` into the output directory
and exit nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .bootstrap import BETA_CHECK_MODES, CS_LOSS_MODES, BootstrapEngine
from .config import RunConfig
from .embeddings import id_hash, read_embeddings, read_id_hash, read_manifest
from .evaluation import (
    confusion_by_coarse,
    evaluate,
    predict_corpus,
    read_predictions,
    write_confusion,
    write_predictions,
    write_report,
)
from .model import init_model, save_checkpoint
from .similarity import METRICS
from .synthetic import SyntheticSpec, write_dataset
from .taxonomy import (
    Corpus,
    Taxonomy,
    choose_select_percent,
    load_corpus,
    load_taxonomy,
    seed_ratios,
    seed_weak_supervision,
)

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "C2F_OUTPUT_ROOT"

ABLATION_VARIANTS = {
    "fine": {"mapping_free": True},
    "bootstrap": {"bootstrap_epochs": 0},
    "gloss": {"no_gloss": True},
    "select": {"no_select": True},
    "similarity": {"metric": "cosine"},
    "manhattan": {"metric": "manhattan"},
    "euclidean": {"metric": "euclidean"},
}


def resolve_output_dir(path: str) -> Path:
    p = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def _write_error(out_dir: Path | None, exc: BaseException) -> None:
    record = {"error": type(exc).__name__, "message": str(exc)}
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "error.json").write_text(
                json.dumps(record, indent=2) + "\n", encoding="utf-8"
            )
        except OSError:
            pass
    print(f"error: {record['error']}: {record['message']}", file=sys.stderr)


def _load_inputs(cfg: RunConfig) -> tuple[Taxonomy, Corpus, np.ndarray, np.ndarray]:
    cfg.require_files()
    taxonomy = load_taxonomy(cfg.taxonomy)
    corpus = load_corpus(cfg.corpus, taxonomy)
    passages = read_embeddings(cfg.passages, kind="passage")
    prototypes = read_embeddings(cfg.prototype_path(), kind="prototype")
    if passages.n_rows != len(corpus):
        raise ValueError(
            f"passage embeddings have {passages.n_rows} rows, corpus has {len(corpus)}"
        )
    expected_protos = taxonomy.n_fine + taxonomy.n_coarse
    if prototypes.n_rows != expected_protos:
        raise ValueError(
            f"prototype embeddings have {prototypes.n_rows} rows, "
            f"taxonomy needs {expected_protos} (fine then coarse)"
        )
    if passages.dim != prototypes.dim:
        raise ValueError(f"dimension mismatch: passages {passages.dim}, prototypes {prototypes.dim}")
    stored = read_id_hash(cfg.passages)
    if stored is not None and stored != id_hash(p.id for p in corpus.passages):
        raise ValueError("passage embedding rows do not match corpus row order (id hash differs)")
    stored = read_id_hash(cfg.prototype_path())
    if stored is not None and stored != id_hash(taxonomy.prototype_ids()):
        raise ValueError("prototype embedding rows do not match taxonomy row order (id hash differs)")
    return taxonomy, corpus, passages.data, prototypes.data


def run_pipeline(cfg: RunConfig, out_dir: Path) -> dict:
    """Execute one full run into ``out_dir``; returns summary numbers."""
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(cfg.to_json(), encoding="utf-8")

    taxonomy, corpus, passage_matrix, prototype_matrix = _load_inputs(cfg)
    n_seeds = seed_weak_supervision(corpus, cfg.match_mode, cfg.exclusive_scope)
    if cfg.select_percent == "auto":
        r_percent = float(choose_select_percent(seed_ratios(corpus).values()))
    else:
        r_percent = float(cfg.select_percent)

    model = init_model(
        d_base=passage_matrix.shape[1], d_proj=cfg.d_proj, seed=cfg.seed, init_noise=cfg.init_noise
    )
    engine = BootstrapEngine(
        taxonomy=taxonomy,
        corpus=corpus,
        passage_matrix=passage_matrix,
        prototype_matrix=prototype_matrix,
        model=model,
        loss_cfg=cfg.loss_config(),
        sim=cfg.similarity_config(),
        schedule=cfg.schedule(),
        select_percent=r_percent,
        seed=cfg.seed,
        mapping_free=cfg.mapping_free,
        cs_losses=cfg.cs_losses,
        no_select=cfg.no_select,
        beta_check=cfg.beta_check,
    )
    records = engine.run()

    with (out_dir / "run_log.jsonl").open("w", encoding="utf-8") as fh:
        setup = {"phase": "setup", "n_seeds": n_seeds, "select_percent": r_percent}
        fh.write(json.dumps(setup, sort_keys=True) + "\n")
        for record in records:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")

    labels, scores = predict_corpus(
        corpus, taxonomy, engine.model, passage_matrix, engine.fine_base
    )
    write_predictions(out_dir / "predictions.tsv", corpus, taxonomy, labels, scores)
    save_checkpoint(out_dir / "model.c2fm", engine.model)

    summary = {"n_passages": len(corpus), "n_seeds": n_seeds, "select_percent": r_percent}
    gold_mask = [p.gold_fine is not None for p in corpus.passages]
    if any(gold_mask):
        gold = [p.gold_fine for p, m in zip(corpus.passages, gold_mask) if m]
        pred = [int(l) for l, m in zip(labels, gold_mask) if m]
        report = evaluate(gold, pred, taxonomy)
        write_report(out_dir / "report", report, taxonomy)
        fine_names = [f.surface_name for f in taxonomy.fine]
        write_confusion(out_dir / "confusion.tsv", report.confusion, fine_names)
        if cfg.emit_confusion:
            for c in range(taxonomy.n_coarse):
                sub = confusion_by_coarse(report, taxonomy, c)
                names = [taxonomy.fine[f].surface_name for f in taxonomy.candidates(c)]
                write_confusion(
                    out_dir / f"confusion.{taxonomy.coarse[c].surface_name}.tsv", sub, names
                )
        summary["micro_f1"] = report.micro_f1
        summary["macro_f1"] = report.macro_f1
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return summary


# ---------------------------------------------------------------------------
# Subcommand handlers


def cmd_run(args: argparse.Namespace) -> int:
    try:
        cfg = _config_from_args(args)
    except Exception as exc:  # noqa: BLE001
        _write_error(None, exc)
        return 1
    out_dir = resolve_output_dir(cfg.output_dir)
    try:
        summary = run_pipeline(cfg, out_dir)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not handles
        _write_error(out_dir, exc)
        return 1
    line = f"run complete: {summary['n_passages']} passages, {summary['n_seeds']} seeds"
    if "macro_f1" in summary:
        line += f", micro-F1 {summary['micro_f1']:.4f}, macro-F1 {summary['macro_f1']:.4f}"
    print(line)
    print(f"artifacts in {out_dir}")
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    try:
        cfg = _config_from_args(args)
    except Exception as exc:  # noqa: BLE001
        _write_error(None, exc)
        return 1
    out_root = resolve_output_dir(cfg.output_dir)
    variants: list[str] = args.variants
    unknown = sorted(set(variants) - set(ABLATION_VARIANTS))
    if unknown:
        print(f"error: unknown ablation variants: {unknown}", file=sys.stderr)
        return 1
    try:
        rows = [("base", run_pipeline(cfg, out_root / "base"))]
        for name in variants:
            variant_cfg = cfg.with_overrides(**ABLATION_VARIANTS[name])
            rows.append((name, run_pipeline(variant_cfg, out_root / name)))
    except Exception as exc:  # noqa: BLE001
        _write_error(out_root, exc)
        return 1

    missing = [name for name, s in rows if "macro_f1" not in s]
    if missing:
        print(f"error: no gold labels; cannot compare runs {missing}", file=sys.stderr)
        return 1
    base = rows[0][1]
    lines = ["variant\tmicro_f1\tmacro_f1\tdelta_micro\tdelta_macro"]
    for name, s in rows:
        lines.append(
            f"{name}\t{s['micro_f1']:.4f}\t{s['macro_f1']:.4f}"
            f"\t{s['micro_f1'] - base['micro_f1']:+.4f}"
            f"\t{s['macro_f1'] - base['macro_f1']:+.4f}"
        )
    table = "\n".join(lines) + "\n"
    (out_root / "ablation.tsv").write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    out_dir = resolve_output_dir(args.output_dir)
    try:
        spec = SyntheticSpec(
            n_coarse=args.n_coarse,
            fine_per_coarse=args.fine_per_coarse,
            passages_per_fine=args.passages_per_fine,
            dim=args.dim,
            separation=args.separation,
            coarse_separation=args.coarse_separation,
            cluster_std=args.cluster_std,
            cone_scale=args.cone_scale,
            prototype_noise=args.prototype_noise,
            prototype_mix=args.prototype_mix,
            seed_fraction=args.seed_fraction,
            skew=args.skew,
            hub=args.hub,
            seed=args.seed,
        )
        paths = write_dataset(spec, out_dir)
    except Exception as exc:  # noqa: BLE001
        _write_error(out_dir, exc)
        return 1
    for name, path in paths.items():
        print(f"{name}: {path}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    try:
        taxonomy = load_taxonomy(args.taxonomy)
        corpus = load_corpus(args.corpus, taxonomy)
        predicted = read_predictions(args.predictions, taxonomy)
        gold: list[int] = []
        pred: list[int] = []
        for p in corpus.passages:
            if p.gold_fine is None:
                continue
            if p.id not in predicted:
                raise ValueError(f"passage {p.id} has gold but no prediction")
            gold.append(p.gold_fine)
            pred.append(predicted[p.id])
        report = evaluate(gold, pred, taxonomy)
    except Exception as exc:  # noqa: BLE001
        _write_error(None, exc)
        return 1
    print(report.to_text(taxonomy), end="")
    if args.output_dir:
        out_dir = resolve_output_dir(args.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_report(out_dir / "report", report, taxonomy)
        write_confusion(
            out_dir / "confusion.tsv", report.confusion, [f.surface_name for f in taxonomy.fine]
        )
    return 0


def cmd_inspect_embeddings(args: argparse.Namespace) -> int:
    try:
        matrix = read_embeddings(args.path, kind=args.kind)
        norms = np.linalg.norm(matrix.data.astype(np.float64), axis=1)
        info = {
            "path": str(args.path),
            "n_rows": matrix.n_rows,
            "dim": matrix.dim,
            "dtype": "float32",
            "payload_sha256": hashlib.sha256(matrix.data.tobytes()).hexdigest(),
            "id_hash": read_id_hash(args.path),
            "norm_min": float(norms.min()),
            "norm_mean": float(norms.mean()),
            "norm_max": float(norms.max()),
            "manifest": read_manifest(args.path),
        }
    except Exception as exc:  # noqa: BLE001
        _write_error(None, exc)
        return 1
    if args.json:
        print(json.dumps(info, indent=2, sort_keys=True))
    else:
        for key, value in info.items():
            print(f"{key}: {value}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def _add_config_flags(sub: argparse.ArgumentParser) -> None:
    """Flags mirroring RunConfig; None defaults mean "not set here"."""
    sub.add_argument("--config", help="JSON config file; explicit flags override it")
    sub.add_argument("--taxonomy")
    sub.add_argument("--corpus")
    sub.add_argument("--passages")
    sub.add_argument("--prototypes")
    sub.add_argument("--prototypes-no-gloss", dest="prototypes_no_gloss")
    sub.add_argument("--output-dir", dest="output_dir")
    sub.add_argument("--metric", choices=METRICS)
    sub.add_argument("--knn-k", dest="knn_k", type=int)
    sub.add_argument("--margin-global", dest="margin_global", type=float)
    sub.add_argument("--margin-local", dest="margin_local", type=float)
    sub.add_argument("--learning-rate", dest="learning_rate", type=float)
    sub.add_argument("--weight-decay", dest="weight_decay", type=float)
    sub.add_argument("--batch-size", dest="batch_size", type=int)
    sub.add_argument("--d-proj", dest="d_proj", type=int)
    sub.add_argument("--init-noise", dest="init_noise", type=float)
    sub.add_argument("--warmup-epochs", dest="warmup_epochs", type=int)
    sub.add_argument("--bootstrap-epochs", dest="bootstrap_epochs", type=int)
    sub.add_argument(
        "--r",
        dest="select_percent",
        help="selection percentage, or 'auto' to derive it from seed ratios",
    )
    sub.add_argument("--seed", type=int)
    sub.add_argument("--mapping-free", dest="mapping_free", action="store_true", default=None)
    sub.add_argument("--no-select", dest="no_select", action="store_true", default=None)
    sub.add_argument("--no-bootstrap", dest="no_bootstrap", action="store_true", default=None)
    sub.add_argument("--no-gloss", dest="no_gloss", action="store_true", default=None)
    sub.add_argument("--cs-losses", dest="cs_losses", choices=CS_LOSS_MODES)
    sub.add_argument(
        "--literal-hinge-sign", dest="literal_hinge_sign", action="store_true", default=None
    )
    sub.add_argument("--match-mode", dest="match_mode", choices=("token", "substring"))
    sub.add_argument("--exclusive-scope", dest="exclusive_scope", choices=("candidates", "all"))
    sub.add_argument("--beta-check", dest="beta_check", choices=BETA_CHECK_MODES)
    sub.add_argument(
        "--emit-confusion", dest="emit_confusion", action="store_true", default=None
    )


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    raw: dict = {}
    if args.config:
        raw.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    config_fields = {f.name for f in fields(RunConfig)}
    for name in config_fields:
        value = getattr(args, name, None)
        if value is not None:
            raw[name] = value
    if getattr(args, "no_bootstrap", None):
        raw["bootstrap_epochs"] = 0
    if "select_percent" in raw and raw["select_percent"] != "auto":
        raw["select_percent"] = float(raw["select_percent"])
    return RunConfig.from_dict(raw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="c2f", description="Coarse-to-fine label refinement pipeline"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="full training + prediction run")
    _add_config_flags(run)
    run.set_defaults(handler=cmd_run)

    ablate = commands.add_parser("ablate", help="base run plus named variants")
    _add_config_flags(ablate)
    ablate.add_argument(
        "--variants",
        nargs="*",
        default=[],
        help=f"any of: {', '.join(sorted(ABLATION_VARIANTS))}",
    )
    ablate.set_defaults(handler=cmd_ablate)

    gen = commands.add_parser("gen-synthetic", help="write a synthetic dataset")
    gdef = SyntheticSpec()  # argparse defaults stay in lockstep with the dataclass
    gen.add_argument("--output-dir", dest="output_dir", required=True)
    gen.add_argument("--n-coarse", dest="n_coarse", type=int, default=gdef.n_coarse)
    gen.add_argument(
        "--fine-per-coarse", dest="fine_per_coarse", type=int, default=gdef.fine_per_coarse
    )
    gen.add_argument(
        "--passages-per-fine", dest="passages_per_fine", type=int, default=gdef.passages_per_fine
    )
    gen.add_argument("--dim", type=int, default=gdef.dim)
    gen.add_argument("--separation", type=float, default=gdef.separation)
    gen.add_argument(
        "--coarse-separation", dest="coarse_separation", type=float, default=gdef.coarse_separation
    )
    gen.add_argument("--cluster-std", dest="cluster_std", type=float, default=gdef.cluster_std)
    gen.add_argument("--cone-scale", dest="cone_scale", type=float, default=gdef.cone_scale)
    gen.add_argument(
        "--prototype-noise", dest="prototype_noise", type=float, default=gdef.prototype_noise
    )
    gen.add_argument(
        "--prototype-mix", dest="prototype_mix", type=float, default=gdef.prototype_mix
    )
    gen.add_argument(
        "--seed-fraction", dest="seed_fraction", type=float, default=gdef.seed_fraction
    )
    gen.add_argument("--skew", type=float, default=gdef.skew)
    gen.add_argument("--hub", action="store_true")
    gen.add_argument("--seed", type=int, default=gdef.seed)
    gen.set_defaults(handler=cmd_gen_synthetic)

    ev = commands.add_parser("evaluate", help="score a predictions file")
    ev.add_argument("--taxonomy", required=True)
    ev.add_argument("--corpus", required=True)
    ev.add_argument("--predictions", required=True)
    ev.add_argument("--output-dir", dest="output_dir")
    ev.set_defaults(handler=cmd_evaluate)

    inspect = commands.add_parser("inspect-embeddings", help="describe an embedding file")
    inspect.add_argument("path")
    inspect.add_argument("--kind", choices=("passage", "prototype"), default="passage")
    inspect.add_argument("--json", action="store_true")
    inspect.set_defaults(handler=cmd_inspect_embeddings)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
