"""Command-line pipeline: ingest -> embed -> cluster -> project -> split ->
annotate -> metrics -> report, driven by one JSON config file.

Every stage reads the previous stage's artifact by path, writes its own
artifact, and appends a run-log record carrying input digests, seeds, and the
package version. Exit codes: 0 success, 1 operational error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path

from . import __version__
from . import corpus, embed, geometry, llmgen, metrics, report, splits, tsne
from .errors import BenchgapError, ConfigError
from .records import as_fraction, dumps_record, read_records, sha256_file, write_records


@dataclass
class PathsConfig:
    corpus: str = "problems.jsonl"
    eval_records: str = "eval_records.jsonl"
    dataset: str = "artifacts/dataset.jsonl"
    annotated_dataset: str = "artifacts/dataset_annotated.jsonl"
    counterfactuals: str = "artifacts/counterfactuals.jsonl"
    embeddings: str = "artifacts/embeddings.bgem"
    cluster: str = "artifacts/cluster.jsonl"
    projection: str = "artifacts/projection.jsonl"
    manifests: str = "artifacts/manifests"
    reports: str = "artifacts/reports"
    checkpoints: str = "artifacts/checkpoints"


@dataclass
class EmbedServiceConfig:
    url: str = ""
    encoder_tag: str = "all-mpnet-base-v2"
    batch_size: int = 64
    max_in_flight: int = 4
    timeout: float = 30.0
    max_attempts: int = 5
    backoff_base: float = 0.5


@dataclass
class LlmServiceConfig:
    url: str = ""
    model_tag: str = ""
    concurrency: int = 4
    max_attempts: int = 3
    timeout: float = 60.0
    backoff_base: float = 0.5


@dataclass
class ClusteringConfig:
    k: int = 3
    k_range: list[int] = field(default_factory=lambda: [2, 10])


@dataclass
class TsneConfig:
    perplexity: float = 30.0
    learning_rate: float = 200.0
    iterations: int = 1000
    early_exaggeration: float = 12.0
    early_exaggeration_iters: int = 250
    theta: float = 0.5
    pca_dim: int = 50
    exact_limit: int = 5000
    kl_log_every: int = 25


@dataclass
class SplitConfig:
    target_cluster: int = 0
    core_m: int = 2000
    n_bins: int = 5
    per_bin: int = 80
    per_level: int = 40


@dataclass
class ThresholdsConfig:
    opg_negligible: str = "0.02"
    opg_substantial: str = "0.10"
    collapse_drop: str = "0.25"


@dataclass
class SeedsConfig:
    cluster: int = 0
    tsne: int = 0
    sampling: int = 0


@dataclass
class ReportConfig:
    decimals: int = 2


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    embedding: EmbedServiceConfig = field(default_factory=EmbedServiceConfig)
    llm: LlmServiceConfig = field(default_factory=LlmServiceConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    tsne: TsneConfig = field(default_factory=TsneConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    thresholds: ThresholdsConfig = field(default_factory=ThresholdsConfig)
    seeds: SeedsConfig = field(default_factory=SeedsConfig)
    report: ReportConfig = field(default_factory=ReportConfig)


def _build_section(cls, data: dict, where: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = known[name].type
        if dataclasses.is_dataclass(_resolve(ftype)):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}.{name}: expected an object")
            kwargs[name] = _build_section(_resolve(ftype), value, f"{where}.{name}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_SECTION_TYPES = {f.name: f.default_factory for f in fields(PipelineConfig)}


def _resolve(ftype):
    # dataclass field types arrive as strings under `from __future__ import annotations`
    if isinstance(ftype, str):
        return globals().get(ftype, ftype)
    return ftype


def load_config(path: str | Path, overrides: list[str] | None = None) -> PipelineConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    for key, value in (overrides or {}) if isinstance(overrides, dict) else _parse_overrides(overrides or []):
        _apply_override(data, key, value)
    cfg = _build_section(PipelineConfig, data, "config")
    _resolve_paths(cfg.paths, path.parent)
    validate_config(cfg)
    return cfg


def _parse_overrides(pairs: list[str]):
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} must look like section.field=value")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        yield key, value


def _apply_override(data: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {dotted!r}: {part!r} is not an object")
    node[parts[-1]] = value


def _resolve_paths(paths: PathsConfig, base: Path) -> None:
    for f in fields(paths):
        value = getattr(paths, f.name)
        if value and not Path(value).is_absolute():
            setattr(paths, f.name, str(base / value))


def validate_config(cfg: PipelineConfig) -> None:
    """Check every numeric parameter against its operation's preconditions
    before any stage writes anything."""
    checks = [
        (cfg.clustering.k >= 1, "clustering.k must be >= 1"),
        (
            len(cfg.clustering.k_range) == 2 and 1 <= cfg.clustering.k_range[0] <= cfg.clustering.k_range[1],
            "clustering.k_range must be [lo, hi] with 1 <= lo <= hi",
        ),
        (cfg.tsne.perplexity >= 2, "tsne.perplexity must be >= 2"),
        (cfg.tsne.iterations >= 1, "tsne.iterations must be >= 1"),
        (cfg.tsne.early_exaggeration_iters >= 0, "tsne.early_exaggeration_iters must be >= 0"),
        (cfg.tsne.early_exaggeration > 0, "tsne.early_exaggeration must be > 0"),
        (cfg.tsne.learning_rate > 0, "tsne.learning_rate must be > 0"),
        (cfg.tsne.theta >= 0, "tsne.theta must be >= 0"),
        (cfg.tsne.kl_log_every >= 1, "tsne.kl_log_every must be >= 1"),
        (cfg.split.core_m >= 1, "split.core_m must be >= 1"),
        (cfg.split.n_bins >= 1, "split.n_bins must be >= 1"),
        (cfg.split.per_bin >= 0, "split.per_bin must be >= 0"),
        (cfg.split.per_level >= 1, "split.per_level must be >= 1"),
        (cfg.split.target_cluster >= 0, "split.target_cluster must be >= 0"),
        (cfg.embedding.batch_size >= 1, "embedding.batch_size must be >= 1"),
        (cfg.embedding.max_attempts >= 1, "embedding.max_attempts must be >= 1"),
        (cfg.llm.concurrency >= 1, "llm.concurrency must be >= 1"),
        (cfg.llm.max_attempts >= 1, "llm.max_attempts must be >= 1"),
        (cfg.report.decimals >= 0, "report.decimals must be >= 0"),
    ]
    for ok, message in checks:
        if not ok:
            raise ConfigError(message)
    t_neg, t_sub = as_fraction(cfg.thresholds.opg_negligible), as_fraction(cfg.thresholds.opg_substantial)
    if not 0 <= t_neg <= t_sub:
        raise ConfigError("thresholds: need 0 <= opg_negligible <= opg_substantial")
    drop = as_fraction(cfg.thresholds.collapse_drop)
    if not 0 <= drop <= 1:
        raise ConfigError("thresholds.collapse_drop must be in [0, 1]")


# ---------------------------------------------------------------------------
# Stage plumbing


def _require(path: str, producer: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise BenchgapError(f"missing artifact {p}; run `benchgap {producer}` first")
    return p


def _run_log(cfg: PipelineConfig, stage: str, inputs: dict[str, str], outputs: dict[str, str], seeds: dict | None = None) -> None:
    log_path = Path(cfg.paths.reports) / "run_log.jsonl"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    record = {
        "stage": stage,
        "inputs": inputs,
        "outputs": outputs,
        "seeds": seeds or {},
        "version": __version__,
    }
    with open(log_path, "a", encoding="utf-8") as fh:
        fh.write(dumps_record(record) + "\n")


def _tsne_params(cfg: PipelineConfig) -> tsne.TsneParams:
    c = cfg.tsne
    return tsne.TsneParams(
        perplexity=c.perplexity,
        learning_rate=c.learning_rate,
        iterations=c.iterations,
        early_exaggeration=c.early_exaggeration,
        early_exaggeration_iters=c.early_exaggeration_iters,
        theta=c.theta,
        pca_dim=c.pca_dim,
        exact_limit=c.exact_limit,
        kl_log_every=c.kl_log_every,
    )


def _policy(cfg: PipelineConfig) -> report.RenderPolicy:
    return report.RenderPolicy(decimals=cfg.report.decimals)


def _write_tables(cfg: PipelineConfig, name: str, obj) -> None:
    out = Path(cfg.paths.reports)
    out.mkdir(parents=True, exist_ok=True)
    policy = _policy(cfg)
    (out / f"{name}.md").write_text(render_titled(name, obj, policy), encoding="utf-8")
    (out / f"{name}.csv").write_text(report.render_table(obj, "csv", policy), encoding="utf-8")


def render_titled(name: str, obj, policy: report.RenderPolicy) -> str:
    return f"## {name}\n\n" + report.render_table(obj, "markdown", policy)


def _write_series(cfg: PipelineConfig, name: str, series_list: list[metrics.CurveSeries]) -> None:
    out = Path(cfg.paths.reports)
    out.mkdir(parents=True, exist_ok=True)
    records = [
        {
            "kind": s.kind,
            "x": s.x,
            "y": [str(Fraction(v)) if not isinstance(v, float) else repr(v) for v in s.y],
            "metadata": s.metadata,
        }
        for s in series_list
    ]
    write_records(out / f"{name}_series.jsonl", records)


def _load_series(path: Path) -> list[metrics.CurveSeries]:
    out = []
    for rec in read_records(path):
        ys = [as_fraction(v) for v in rec["y"]]
        out.append(metrics.CurveSeries(kind=rec["kind"], x=rec["x"], y=ys, metadata=rec.get("metadata", {})))
    return out


def _accuracy_cells(path: Path) -> list[metrics.AccuracyCell]:
    cells = []
    for lineno, rec in enumerate(read_records(path), start=1):
        model = rec.get("model_id")
        split = rec.get("split_name")
        if not model or not split:
            raise BenchgapError(f"{path}:{lineno}: model_id and split_name are required")
        if "percent" in rec:
            cells.append(metrics.AccuracyCell.from_percent(model, split, rec["percent"]))
        else:
            cells.append(metrics.AccuracyCell(model, split, int(rec["passes"]), int(rec["total"])))
    return cells


# ---------------------------------------------------------------------------
# Stages


def cmd_ingest(cfg: PipelineConfig, args) -> None:
    source = _require(cfg.paths.corpus, "ingest (config paths.corpus points at a missing file)")
    dataset = corpus.load_problems(source)
    digest = corpus.save_problems(dataset, cfg.paths.dataset)
    _run_log(cfg, "ingest", {str(source): sha256_file(source)}, {cfg.paths.dataset: digest})
    print(f"ingested {len(dataset)} problems -> {cfg.paths.dataset}")


def cmd_embed(cfg: PipelineConfig, args) -> None:
    dataset_path = _require(cfg.paths.dataset, "ingest")
    if not cfg.embedding.url:
        raise ConfigError("embedding.url is not configured")
    dataset = corpus.load_problems(dataset_path)
    client = embed.EmbeddingClient(
        url=cfg.embedding.url,
        encoder_tag=cfg.embedding.encoder_tag,
        timeout=cfg.embedding.timeout,
        max_attempts=cfg.embedding.max_attempts,
        backoff_base=cfg.embedding.backoff_base,
        max_in_flight=cfg.embedding.max_in_flight,
    )
    matrix = embed.fetch_embeddings(
        [p.statement for p in dataset.problems],
        client,
        batch_size=cfg.embedding.batch_size,
        ids=[p.id for p in dataset.problems],
    )
    embed.save_embeddings(matrix, cfg.paths.embeddings)
    _run_log(
        cfg,
        "embed",
        {str(dataset_path): sha256_file(dataset_path)},
        {cfg.paths.embeddings: sha256_file(cfg.paths.embeddings)},
    )
    print(f"embedded {len(matrix)} statements at d={matrix.dimension} -> {cfg.paths.embeddings}")


def cmd_cluster(cfg: PipelineConfig, args) -> None:
    store = _require(cfg.paths.embeddings, "embed")
    matrix = embed.load_embeddings(store)
    model = geometry.kmeans(matrix.vectors, cfg.clustering.k, cfg.seeds.cluster)
    geometry.save_cluster(model, matrix.ids, cfg.paths.cluster)
    outputs = {cfg.paths.cluster: sha256_file(cfg.paths.cluster)}
    if getattr(args, "selection", False):
        lo, hi = cfg.clustering.k_range
        ks = range(lo, min(hi, len(matrix)) + 1)
        rows = []
        for k, inertia in geometry.inertia_curve(matrix.vectors, ks, cfg.seeds.cluster):
            sil = ""
            if k >= 2:
                sil = repr(geometry.silhouette(matrix.vectors, geometry.kmeans(matrix.vectors, k, cfg.seeds.cluster).assignments))
            rows.append({"k": k, "inertia": inertia, "silhouette": sil})
        sel_path = Path(cfg.paths.reports) / "cluster_selection.jsonl"
        write_records(sel_path, rows)
        outputs[str(sel_path)] = sha256_file(sel_path)
    _run_log(cfg, "cluster", {str(store): sha256_file(store)}, outputs, {"cluster": cfg.seeds.cluster})
    sizes = model.cluster_sizes()
    print(f"k={model.k} inertia={model.inertia:.6g} sizes={sizes.tolist()} -> {cfg.paths.cluster}")


def cmd_project(cfg: PipelineConfig, args) -> None:
    store = _require(cfg.paths.embeddings, "embed")
    matrix = embed.load_embeddings(store)
    proj = tsne.project(matrix, _tsne_params(cfg), seed=cfg.seeds.tsne)
    tsne.save_projection(proj, cfg.paths.projection)
    _run_log(
        cfg,
        "project",
        {str(store): sha256_file(store)},
        {cfg.paths.projection: sha256_file(cfg.paths.projection)},
        {"tsne": cfg.seeds.tsne},
    )
    initial, final = proj.kl_history[0][1], proj.kl_history[-1][1]
    print(f"projected {len(proj.ids)} points; KL {initial:.4f} -> {final:.4f} -> {cfg.paths.projection}")


def _manifest_path(cfg: PipelineConfig, name: str) -> Path:
    return Path(cfg.paths.manifests) / f"{name}.jsonl"


def cmd_split(cfg: PipelineConfig, args) -> None:
    which = args.what
    manifests_out: list[splits.SplitManifest] = []
    inputs: dict[str, str] = {}
    if which == "core":
        proj_path = _require(cfg.paths.projection, "project")
        cluster_path = _require(cfg.paths.cluster, "cluster")
        proj = tsne.load_projection(proj_path)
        model, ids = geometry.load_cluster(cluster_path)
        manifest = splits.select_core(proj, model, cfg.split.target_cluster, cfg.split.core_m, cluster_ids=ids)
        manifest = dataclasses.replace(manifest, name="core")
        manifests_out.append(manifest)
        inputs = {str(proj_path): sha256_file(proj_path), str(cluster_path): sha256_file(cluster_path)}
    elif which == "bins":
        proj_path = _require(cfg.paths.projection, "project")
        core_path = _require(_manifest_path(cfg, "core"), "split core")
        proj = tsne.load_projection(proj_path)
        core = splits.load_manifest(core_path)
        manifests_out.extend(
            splits.distance_bins(proj, core, cfg.split.n_bins, cfg.split.per_bin, cfg.seeds.sampling)
        )
        inputs = {str(proj_path): sha256_file(proj_path), str(core_path): sha256_file(core_path)}
    elif which == "difficulty":
        dataset_path = _require(cfg.paths.dataset, "ingest")
        dataset = corpus.load_problems(dataset_path)
        manifests_out.extend(splits.difficulty_partitions(dataset))
        inputs = {str(dataset_path): sha256_file(dataset_path)}
    elif which == "balanced":
        dataset_path = _require(cfg.paths.dataset, "ingest")
        dataset = corpus.load_problems(dataset_path)
        manifest = splits.balanced_testset(dataset, cfg.split.per_level, cfg.seeds.sampling)
        manifests_out.append(dataclasses.replace(manifest, name="balanced"))
        inputs = {str(dataset_path): sha256_file(dataset_path)}
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown split kind {which!r}")
    outputs = {}
    for manifest in manifests_out:
        path = _manifest_path(cfg, manifest.name)
        digest = splits.save_manifest(manifest, path)
        outputs[str(path)] = digest
    _run_log(cfg, f"split {which}", inputs, outputs, {"sampling": cfg.seeds.sampling})
    for manifest in manifests_out:
        print(f"{manifest.name}: {len(manifest)} members")


def _chat_client(cfg: PipelineConfig) -> llmgen.ChatClient:
    if not cfg.llm.url:
        raise ConfigError("llm.url is not configured")
    return llmgen.ChatClient(
        url=cfg.llm.url,
        model_tag=cfg.llm.model_tag,
        timeout=cfg.llm.timeout,
        backoff_base=cfg.llm.backoff_base,
    )


def cmd_annotate(cfg: PipelineConfig, args) -> None:
    dataset_path = _require(cfg.paths.dataset, "ingest")
    dataset = corpus.load_problems(dataset_path)
    client = _chat_client(cfg)
    checkpoint_dir = Path(cfg.paths.checkpoints)
    if args.what == "difficulty":
        job = llmgen.GenerationJob(
            kind="difficulty",
            prompt_template=llmgen.DIFFICULTY_PROMPT_TEMPLATE,
            items=[p.id for p in dataset.problems],
            client=client,
            checkpoint_path=checkpoint_dir / "difficulty.jsonl",
            concurrency=cfg.llm.concurrency,
            max_attempts=cfg.llm.max_attempts,
        )
        result = llmgen.annotate_difficulty(job, dataset)
        digest = corpus.save_problems(result.dataset, cfg.paths.annotated_dataset)
        _run_log(cfg, "annotate difficulty", {str(dataset_path): sha256_file(dataset_path)}, {cfg.paths.annotated_dataset: digest})
        annotated = sum(1 for p in result.dataset.problems if p.difficulty is not None)
        print(f"annotated {annotated}/{len(dataset)} problems; {len(result.failed)} failed -> {cfg.paths.annotated_dataset}")
        if result.failed:
            for item_id, reason in sorted(result.failed.items()):
                print(f"  failed {item_id}: {reason}", file=sys.stderr)
    else:
        job = llmgen.GenerationJob(
            kind="counterfactual",
            prompt_template=llmgen.COUNTERFACTUAL_PROMPT_TEMPLATE,
            items=[p.id for p in dataset.problems],
            client=client,
            checkpoint_path=checkpoint_dir / "counterfactual.jsonl",
            concurrency=cfg.llm.concurrency,
            max_attempts=cfg.llm.max_attempts,
        )
        result = llmgen.generate_counterfactuals(job, dataset)
        validated = [llmgen.validate_counterfactual(item) for item in result.items]
        records = [dataclasses.asdict(item) for item in validated]
        digest = write_records(cfg.paths.counterfactuals, records)
        _run_log(cfg, "annotate counterfactual", {str(dataset_path): sha256_file(dataset_path)}, {cfg.paths.counterfactuals: digest})
        kept = sum(1 for item in validated if item.status == llmgen.KEPT)
        print(f"generated {len(validated)} items ({kept} kept); {len(result.failed)} failed -> {cfg.paths.counterfactuals}")


def _opg_thresholds(cfg: PipelineConfig):
    return (as_fraction(cfg.thresholds.opg_negligible), as_fraction(cfg.thresholds.opg_substantial))


def cmd_metrics(cfg: PipelineConfig, args) -> None:
    what = args.what
    if what == "opg":
        cells_path = _require(args.cells, "metrics opg --cells <file>")
        reports = [
            metrics.opg(
                rec["p_test_oracle"],
                rec["p_train"],
                thresholds=_opg_thresholds(cfg),
                algorithm_tag=rec.get("algorithm", ""),
                label=rec.get("label", ""),
            )
            for rec in read_records(cells_path)
        ]
        _write_tables(cfg, "opg", reports)
        for r in reports:
            print(f"{r.label or r.algorithm_tag}: OPG {float(r.opg) * 100:+.2f}% ({r.classification})")
    elif what == "matrix":
        cells_path = _require(args.cells, "metrics matrix --cells <file>")
        matrix = metrics.cross_matrix(_accuracy_cells(cells_path))
        _write_tables(cfg, "matrix", matrix)
        print(f"matrix rendered for rows {matrix.model_order}")
    elif what == "pcross":
        cells_path = _require(args.cells, "metrics pcross --cells <file>")
        matrix = metrics.cross_matrix(_accuracy_cells(cells_path))
        series, monotonic = metrics.p_cross(matrix)
        gap_series = metrics.specialist_gap(matrix)
        _write_tables(cfg, "pcross", series)
        _write_tables(cfg, "specialist_gap", gap_series)
        _write_series(cfg, "pcross", [series, gap_series])
        print(f"p_cross monotone non-decreasing: {monotonic}")
    elif what == "gain":
        series = _gain_from_args(cfg, args)
        _write_tables(cfg, "gain", series)
        _write_series(cfg, "gain", [series])
        inversions = series.metadata["inversions"]
        print(f"gain inversions at bins: {inversions if inversions else 'none'}")
    elif what == "lift":
        cells_path = _require(args.cells, "metrics lift --cells <file>")
        curves = metrics.lift_curve(_accuracy_cells(cells_path))
        for curve in curves:
            _write_tables(cfg, f"lift_{curve.metadata['group']}", curve)
        _write_series(cfg, "lift", curves)
        print(f"lift curves for groups: {[c.metadata['group'] for c in curves]}")
    elif what == "collapse":
        drop = as_fraction(cfg.thresholds.collapse_drop)
        if args.cells:
            rows = [
                metrics.collapse(rec["p_bal"], rec["p_cf"], drop)
                for rec in read_records(_require(args.cells, "metrics collapse --cells <file>"))
            ]
        elif args.p_bal is not None and args.p_cf is not None:
            rows = [metrics.collapse(args.p_bal, args.p_cf, drop)]
        else:
            raise ConfigError("metrics collapse needs --cells or both --p-bal and --p-cf")
        _write_tables(cfg, "collapse", rows)
        for r in rows:
            print(
                f"drop {float(r.drop_pp):.2f}pp relative {float(r.relative_drop) * 100:.2f}% "
                f"collapse={'yes' if r.collapsed else 'no'}"
            )
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown metrics kind {what!r}")


def _gain_from_args(cfg: PipelineConfig, args) -> metrics.CurveSeries:
    if args.cells:
        cells = _accuracy_cells(_require(args.cells, "metrics gain --cells <file>"))
        series, _ = metrics.gain_curve(cells, args.core_model, args.base_model)
        return series
    dataset_path = _require(cfg.paths.dataset, "ingest")
    records_path = _require(cfg.paths.eval_records, "ingest (config paths.eval_records points at a missing file)")
    dataset = corpus.load_problems(dataset_path)
    eval_set = corpus.join_eval(dataset, corpus.load_eval_records(records_path))
    bin_manifests = []
    for k in range(1, cfg.split.n_bins + 1):
        bin_manifests.append(splits.load_manifest(_require(_manifest_path(cfg, f"bin_{k}"), "split bins")))
    cells = [
        metrics.pass_at_1(eval_set, model, manifest)
        for manifest in bin_manifests
        for model in (args.core_model, args.base_model)
    ]
    series, _ = metrics.gain_curve(
        cells, args.core_model, args.base_model, [m.name for m in bin_manifests]
    )
    return series


def cmd_report(cfg: PipelineConfig, args) -> None:
    reports_dir = Path(cfg.paths.reports)
    if not reports_dir.is_dir():
        raise BenchgapError(f"missing reports directory {reports_dir}; run a `benchgap metrics ...` stage first")
    sections = sorted(p for p in reports_dir.glob("*.md") if p.name != "report.md")
    series_files = sorted(reports_dir.glob("*_series.jsonl"))
    if not sections and not series_files:
        raise BenchgapError("nothing to report; run a `benchgap metrics ...` stage first")
    parts = [f"# benchgap report\n"]
    for section in sections:
        parts.append(section.read_text(encoding="utf-8").rstrip() + "\n")
    report_path = reports_dir / "report.md"
    report_path.write_text("\n".join(parts), encoding="utf-8")
    outputs = {str(report_path): sha256_file(report_path)}
    all_series: list[metrics.CurveSeries] = []
    for series_file in series_files:
        all_series.extend(_load_series(series_file))
    if all_series:
        for path in report.emit_plot_data(all_series, reports_dir / "plot_data", _policy(cfg)):
            outputs[str(path)] = sha256_file(path)
    _run_log(cfg, "report", {str(p): sha256_file(p) for p in sections}, outputs)
    print(f"report -> {report_path} (sha256 {outputs[str(report_path)]})")


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="benchgap",
        description="Benchmark-generalization diagnostics pipeline",
    )
    parser.add_argument("--config", required=True, help="path to the pipeline config (JSON)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.FIELD=VALUE",
        help="override a config field (repeatable)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", help="validate the corpus and write the canonical dataset")
    sub.add_parser("embed", help="fetch sentence embeddings for every statement")
    cluster_p = sub.add_parser("cluster", help="k-means over the embedding space")
    cluster_p.add_argument("--selection", action="store_true", help="also write the k-selection curve")
    sub.add_parser("project", help="t-SNE projection to 2-D")

    split_p = sub.add_parser("split", help="construct a named split")
    split_p.add_argument("what", choices=["core", "bins", "difficulty", "balanced"])

    annotate_p = sub.add_parser("annotate", help="run an LLM pipeline")
    annotate_p.add_argument("what", choices=["difficulty", "counterfactual"])

    metrics_p = sub.add_parser("metrics", help="compute a diagnostic")
    metrics_p.add_argument("what", choices=["opg", "matrix", "pcross", "gain", "lift", "collapse"])
    metrics_p.add_argument("--cells", help="accuracy/opg cells file (line-delimited records)")
    metrics_p.add_argument("--core-model", default="core", help="model id of the core-trained specialist")
    metrics_p.add_argument("--base-model", default="base", help="model id of the untuned baseline")
    metrics_p.add_argument("--p-bal", type=str, default=None, help="balanced-set accuracy (percent)")
    metrics_p.add_argument("--p-cf", type=str, default=None, help="counterfactual-set accuracy (percent)")

    sub.add_parser("report", help="bundle metric tables into report.md and emit plot data")
    return parser


COMMANDS = {
    "ingest": cmd_ingest,
    "embed": cmd_embed,
    "cluster": cmd_cluster,
    "project": cmd_project,
    "split": cmd_split,
    "annotate": cmd_annotate,
    "metrics": cmd_metrics,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (BenchgapError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
