"""Command-line entry point.

Exit codes: 0 success, 1 analysis error (message on stderr), 2 usage error.
Every stage writes ``summary.json`` (byte-deterministic, no timestamps), its
SVG figures and ``manifest.json`` (resolved config, input digests, seed and
timestamps) under ``--out``.
"""

from __future__ import annotations

import argparse
import json
import secrets
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__, clinical, ingest, intersect, report, slices, stratify, synth
from .errors import BiaslensError, UnknownFactor

STAGES = ("discover", "stratify", "intersect")
DEFAULT_PAIRS = (("bmi", "ps_avg"), ("ga_weeks", "ps_avg"))


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# Resolved configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    stage: str
    records: str | None = None
    schema: str | None = None
    embeddings: str | None = None
    out: str = "."
    audit_id: str = "audit"
    seed: int = 0
    seed_source: str = "cli"
    models: list[str] | None = None
    ranking_model: str | None = None
    variance_target: float = 0.99
    pca_cap: int = 128
    k_min: int = 5
    k_max: int = 20
    restarts: int = 5
    standardize: bool = False
    quantiles: int = stratify.DEFAULT_QUANTILES
    min_n: int = stratify.DEFAULT_MIN_N
    factors: list[str] | None = None
    pairs: list[list[str]] | None = None
    bh_adjust: bool = False
    persist: float = intersect.DEFAULT_PERSIST_PP
    attenuate: float = intersect.DEFAULT_ATTENUATE

    def echo(self) -> dict:
        d = asdict(self)
        d.pop("out")  # output location does not affect results
        return d


def _parse_pairs(text: str) -> list[list[str]]:
    pairs = []
    for chunk in text.split(","):
        parts = chunk.strip().split(":")
        if len(parts) != 2 or not all(parts):
            raise UsageError(f"malformed pair {chunk!r}; expected row:col")
        pairs.append(parts)
    return pairs


def _split(text: str | None) -> list[str] | None:
    return None if text is None else [t.strip() for t in text.split(",") if t.strip()]


def resolve_config(stage: str, args: argparse.Namespace, dataset: ingest.Dataset | None = None) -> RunConfig:
    seed, source = getattr(args, "seed", None), "cli"
    if seed is None:
        seed, source = secrets.randbits(32), "entropy"
    cfg = RunConfig(stage=stage, seed=seed, seed_source=source)
    for name in ("records", "schema", "embeddings", "out", "audit_id", "ranking_model", "variance_target",
                 "pca_cap", "k_min", "k_max", "restarts", "standardize", "quantiles", "min_n", "bh_adjust",
                 "persist", "attenuate"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, v)
    cfg.models = _split(getattr(args, "models", None))
    cfg.factors = _split(getattr(args, "factors", None))
    if getattr(args, "pairs", None):
        cfg.pairs = _parse_pairs(args.pairs)
    if dataset is not None:
        cfg.models = cfg.models or list(dataset.model_names)
        cfg.ranking_model = cfg.ranking_model or cfg.models[0]
        cfg.factors = cfg.factors or list(dataset.schema.names)
        if cfg.pairs is None:
            cfg.pairs = [list(p) for p in DEFAULT_PAIRS if all(f in dataset.schema for f in p)]
    return cfg


# ---------------------------------------------------------------------------
# Stages (pure: dataset + config -> summary sections + figures)
# ---------------------------------------------------------------------------

def _tv_from_overall(profile: slices.SliceProfile) -> dict[str, float]:
    return {f: 0.5 * sum(abs(b.share_in_slice - b.share_overall) for b in bins)
            for f, bins in profile.factors.items()}


def stage_discover(ds: ingest.Dataset, cfg: RunConfig):
    sc = slices.SliceConfig(cfg.variance_target, cfg.pca_cap, cfg.k_min, cfg.k_max, cfg.restarts, cfg.seed,
                            cfg.standardize)
    result = slices.discover_slices(ds, cfg.ranking_model, sc)
    binnings, failed = stratify.resolve_binnings(ds, cfg.factors, q=cfg.quantiles)
    best = slices.characterize_slice(ds, result, result.best, binnings)
    worst = slices.characterize_slice(ds, result, result.worst, binnings)
    section = result.to_dict()
    section["profiles"] = {"best": best.to_dict(), "worst": worst.to_dict()}
    section["divergence"] = [d.to_dict() for d in slices.compare_slices(best, worst)]
    section["unbinned_factors"] = failed

    tv_b, tv_w = _tv_from_overall(best), _tv_from_overall(worst)
    axes = [{"factor": f, "values": {"best slice": tv_b[f], "worst slice": tv_w[f]}} for f in binnings]
    figures = {}
    if axes:
        svg = report.render_radar(axes, ["best slice", "worst slice"],
                                  report.RadarStyle(title="Slice profile: distance from overall factor mix", unit="TV"))
        figures[report.figure_filename(cfg.audit_id, "slice-profile", "all")] = svg
    return {"slices": section}, figures, result


def stage_stratify(ds: ingest.Dataset, cfg: RunConfig):
    radar = stratify.global_gap_profile(ds, cfg.factors, cfg.models, min_n=cfg.min_n, q=cfg.quantiles,
                                        bh_adjust=cfg.bh_adjust)
    section = radar.to_dict()
    section["strata"] = {
        a.factor: {m: [s.to_dict() for s in stratify.stratified_mre(ds, a.binning, m, cfg.min_n)]
                   for m in cfg.models}
        for a in radar.axes if a.binning is not None
    }
    svg = report.render_radar(report.radar_axes(radar, cfg.models), cfg.models,
                              report.RadarStyle(title="Best-vs-worst MRE gap per factor"))
    return {"factor_gaps": section}, {report.figure_filename(cfg.audit_id, "radar", "all"): svg}, radar


def stage_intersect(ds: ingest.Dataset, cfg: RunConfig):
    grids, gradients, verdicts, figures = [], [], [], {}
    verdict_map: dict[str, dict[str, intersect.Verdict]] = {}
    for row, col in cfg.pairs or []:
        for f in (row, col):
            if f not in ds.schema:
                raise UnknownFactor(f"unknown factor {f!r} in pair {row}:{col}")
        binnings, failed = stratify.resolve_binnings(ds, [row, col], q=cfg.quantiles)
        if failed:
            f, reason = next(iter(failed.items()))
            raise BiaslensError(f"factor {f!r} cannot be binned: {reason}")
        grid = intersect.joint_partition(ds, binnings[row], binnings[col], cfg.models, cfg.min_n)
        grids.append(grid.to_dict())
        for m in cfg.models:
            summary = intersect.within_stratum_gradients(grid, model=m)
            verdict = intersect.confounding_verdict(summary, cfg.persist, cfg.attenuate)
            gradients.append(summary.to_dict())
            verdicts.append({"pair": f"{row}:{col}", "row_factor": row, "col_factor": col, "model": m,
                             **verdict.to_dict()})
            verdict_map.setdefault(m, {})[f"{row}:{col}"] = verdict
            figures[report.figure_filename(cfg.audit_id, f"heatmap-{m}", [row, col])] = report.render_heatmap(grid, m)
    sections = {"joint_grids": grids, "gradient_summaries": gradients, "verdicts": verdicts}
    return sections, figures, verdict_map


STAGE_FUNCS = {"discover": stage_discover, "stratify": stage_stratify, "intersect": stage_intersect}


def run_stages(ds: ingest.Dataset, cfg: RunConfig, stages: Sequence[str]):
    sections, figures, results = {}, {}, {}
    for s in stages:
        sec, figs, res = STAGE_FUNCS[s](ds, cfg)
        sections.update(sec)
        figures.update(figs)
        results[s] = res
    return sections, figures, results


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _input_digests(cfg: RunConfig) -> dict:
    out = {}
    for name in ("records", "schema", "embeddings"):
        p = getattr(cfg, name)
        if p:
            out[name] = {"path": str(p), "sha256": ingest.file_digest(p)}
    return out


def write_outputs(out_dir: Path, cfg: RunConfig, ds: ingest.Dataset, sections: dict, figures: dict,
                  started: str) -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    digests = _input_digests(cfg)
    dataset_info = {**ds.digest(), "inputs": {k: v["sha256"] for k, v in digests.items()}}
    summary = report.AuditSummary(config=cfg.echo(), dataset=dataset_info, **sections)
    (out_dir / "summary.json").write_text(summary.to_json(), encoding="utf-8")
    for name, svg in sorted(figures.items()):
        (out_dir / name).write_text(svg, encoding="utf-8")
    outputs = ["summary.json", *sorted(figures)]
    manifest = {
        "tool_version": __version__,
        "stage": cfg.stage,
        "config": cfg.echo(),
        "seed": cfg.seed,
        "seed_source": cfg.seed_source,
        "inputs": digests,
        "outputs": outputs,
        "timestamps": {"started": started, "finished": _now()},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return outputs


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _data_args(p):
    p.add_argument("--records", required=True, help="records CSV")
    p.add_argument("--schema", required=True, help="factor schema JSON")
    p.add_argument("--embeddings", help="embeddings file (BLNS binary or CSV)")


def _common_args(p, out_required=True):
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--seed", type=int, help="random seed (drawn from system entropy if omitted)")
    p.add_argument("--models", help="comma-separated model columns (default: all)")
    p.add_argument("--audit-id", default="audit", help="prefix for figure file names")


def _discover_args(p):
    p.add_argument("--k-min", type=int, default=5)
    p.add_argument("--k-max", type=int, default=20)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--variance-target", type=float, default=0.99)
    p.add_argument("--pca-cap", type=int, default=128)
    p.add_argument("--standardize", action="store_true", help="z-score embeddings before PCA")
    p.add_argument("--ranking-model", help="model whose MRE ranks slices (default: first model)")


def _stratify_args(p, with_bh=True):
    p.add_argument("--quantiles", type=int, default=stratify.DEFAULT_QUANTILES)
    p.add_argument("--min-n", type=int, default=stratify.DEFAULT_MIN_N)
    p.add_argument("--factors", help="comma-separated factors (default: all in schema)")
    if with_bh:
        p.add_argument("--bh-adjust", action="store_true", help="Benjamini-Hochberg adjust p-values")


def _intersect_args(p):
    p.add_argument("--pairs", help="row:col factor pairs, e.g. bmi:ps_avg,ga_weeks:ps_avg")
    p.add_argument("--persist", type=float, default=intersect.DEFAULT_PERSIST_PP,
                   help="gradient magnitude (pp) that counts as persisting")
    p.add_argument("--attenuate", type=float, default=intersect.DEFAULT_ATTENUATE,
                   help="attenuation fraction that counts as confounded")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="biaslens", description="Intersectional error audit for regression predictions.")
    parser.add_argument("--version", action="version", version=f"biaslens {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("discover", help="stage 1: embedding slice discovery")
    _data_args(p), _common_args(p), _discover_args(p), _stratify_args(p, with_bh=False)
    p = sub.add_parser("stratify", help="stage 2: per-factor best-vs-worst gaps")
    _data_args(p), _common_args(p), _stratify_args(p)
    p = sub.add_parser("intersect", help="stage 3: joint grids and confounding verdicts")
    _data_args(p), _common_args(p), _intersect_args(p)
    p.add_argument("--quantiles", type=int, default=stratify.DEFAULT_QUANTILES)
    p.add_argument("--min-n", type=int, default=stratify.DEFAULT_MIN_N)
    p = sub.add_parser("audit", help="all three stages")
    _data_args(p), _common_args(p), _discover_args(p), _stratify_args(p), _intersect_args(p)

    p = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--scenario", choices=sorted(synth.SCENARIOS), default="independent_ps")
    src.add_argument("--config", help="SynthConfig JSON")
    p.add_argument("--n", type=int, help="override record count")
    p.add_argument("--embeddings-format", choices=("bin", "csv"), default="bin")
    p.add_argument("--self-audit", action="store_true", help="run the audit and score recovery")
    _common_args(p)
    _discover_args(p), _stratify_args(p), _intersect_args(p)

    p = sub.add_parser("efw", help="Hadlock EFW and growth-curve reference weight")
    p.add_argument("--hc", type=float, help="head circumference, cm")
    p.add_argument("--ac", type=float, help="abdominal circumference, cm")
    p.add_argument("--fl", type=float, help="femur length, cm")
    p.add_argument("--coefficients", help="clinical coefficients JSON (default: shipped)")
    p.add_argument("--variant", help="Hadlock variant name")
    p.add_argument("--birth-weight", type=float, help="grams; with --ga-scan/--ga-delivery (days)")
    p.add_argument("--ga-scan", type=float)
    p.add_argument("--ga-delivery", type=float)
    p.add_argument("--curve", help="growth-curve variant name")

    p = sub.add_parser("validate", help="ingest checks and coverage report")
    _data_args(p)
    p.add_argument("--out", help="write validation.json here")
    return parser


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _load(args) -> ingest.Dataset:
    return ingest.load_dataset(args.records, args.schema, args.embeddings)


def cmd_stage(args, stages: Sequence[str]) -> int:
    started = _now()
    ds = _load(args)
    cfg = resolve_config(args.command, args, ds)
    sections, figures, _ = run_stages(ds, cfg, stages)
    outputs = write_outputs(Path(cfg.out), cfg, ds, sections, figures, started)
    print(f"wrote {len(outputs)} files to {cfg.out}")
    return 0


def cmd_synth(args) -> int:
    started = _now()
    config = synth.SynthConfig.load(args.config) if args.config else synth.SCENARIOS[args.scenario]()
    if args.seed is None:
        args.seed = secrets.randbits(32)
        seed_source = "entropy"
    else:
        seed_source = "cli"
    config.seed = args.seed
    if args.n is not None:
        config.n = args.n
    ds, truth = synth.generate(config)
    out = Path(args.out)
    paths = ingest.save_dataset(ds, out / "dataset", args.embeddings_format)
    (out / "ground_truth.json").write_text(truth.to_json() + "\n", encoding="utf-8")
    (out / "synth_config.json").write_text(json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n",
                                           encoding="utf-8")
    manifest = {"tool_version": __version__, "stage": "synth", "config": config.to_dict(), "seed": config.seed,
                "seed_source": seed_source, "draw_order_version": synth.DRAW_ORDER_VERSION,
                "outputs": {k: str(v.relative_to(out)) for k, v in paths.items()},
                "timestamps": {"started": started, "finished": None}}
    if args.self_audit:
        args.records, args.schema = str(paths["records"]), str(paths["schema"])
        args.embeddings = str(paths["embeddings"]) if "embeddings" in paths else None
        args.out = str(out / "audit")
        ds = _load(args)
        cfg = resolve_config("audit", args, ds)
        stages = STAGES if ds.embeddings is not None else STAGES[1:]
        sections, figures, results = run_stages(ds, cfg, stages)
        write_outputs(Path(cfg.out), cfg, ds, sections, figures, started)
        verdicts = results["intersect"].get(cfg.ranking_model, {})
        recovery = synth.score_recovery(truth, results.get("discover"), results["stratify"], verdicts)
        (out / "recovery.json").write_text(
            json.dumps(report.to_jsonable(recovery), sort_keys=True, indent=2) + "\n", encoding="utf-8")
        print(json.dumps(report.to_jsonable(recovery), sort_keys=True))
    manifest["timestamps"]["finished"] = _now()
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"generated {config.n} records in {out}")
    return 0


def cmd_efw(args) -> int:
    config = clinical.load_coefficients(args.coefficients) if args.coefficients else None
    did = False
    if any(v is not None for v in (args.hc, args.ac, args.fl)):
        if None in (args.hc, args.ac, args.fl):
            raise UsageError("--hc, --ac and --fl must be given together")
        coeffs = clinical.hadlock_coefficients(args.variant, config)
        efw = clinical.hadlock_efw(clinical.Biometry(args.hc, args.ac, args.fl), coeffs)
        print(f"efw_g {efw:.1f}")
        did = True
    if any(v is not None for v in (args.birth_weight, args.ga_scan, args.ga_delivery)):
        if None in (args.birth_weight, args.ga_scan, args.ga_delivery):
            raise UsageError("--birth-weight, --ga-scan and --ga-delivery must be given together")
        curve = clinical.growth_curve(args.curve, config)
        ref = clinical.reference_weight_at_scan(args.birth_weight, args.ga_scan, args.ga_delivery, curve)
        print(f"reference_weight_g {ref:.1f}")
        did = True
    if not did:
        raise UsageError("give biometry (--hc --ac --fl) and/or --birth-weight --ga-scan --ga-delivery")
    return 0


def cmd_validate(args) -> int:
    ds = _load(args)
    rep = ingest.validate(ds)
    text = json.dumps(rep.to_dict(), sort_keys=True, indent=2) + "\n"
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "validation.json").write_text(text, encoding="utf-8")
    print(text, end="")
    for w in rep.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command in STAGES:
            return cmd_stage(args, [args.command])
        if args.command == "audit":
            return cmd_stage(args, STAGES)
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "efw":
            return cmd_efw(args)
        return cmd_validate(args)
    except UsageError as exc:
        print(f"biaslens: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (BiaslensError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"biaslens: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
