"""Driver for the end-to-end golden pipeline, shared by the acceptance test
and scripts/run_golden.py."""

from __future__ import annotations

import json
from pathlib import Path

from benchgap.cli import main as cli_main
from benchgap.embed import load_embeddings
from benchgap.records import sha256_file

GOLDEN_DIR = Path(__file__).resolve().parent / "fixtures" / "golden"

STAGES = [
    ["ingest"],
    ["embed"],
    ["cluster"],
    ["project"],
    ["split", "core"],
    ["split", "bins"],
    ["split", "difficulty"],
    ["split", "balanced"],
    ["metrics", "gain"],
    ["report"],
]


def golden_embed_fn(fixture_dir: Path = GOLDEN_DIR):
    """statement -> scripted vector, keyed through the fixture's vector store."""
    matrix = load_embeddings(fixture_dir / "embeddings.bgem")
    statements = {}
    with open(fixture_dir / "problems.jsonl", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            statements[rec["statement"]] = rec["id"]
    by_id = {pid: matrix.vectors[i].tolist() for i, pid in enumerate(matrix.ids)}

    def embed_fn(text: str) -> list[float]:
        return by_id[statements[text]]

    return embed_fn


def write_golden_config(workdir: Path, embed_url: str, fixture_dir: Path = GOLDEN_DIR) -> Path:
    params = json.loads((fixture_dir / "params.json").read_text(encoding="utf-8"))
    config = {
        "paths": {
            "corpus": str(fixture_dir / "problems.jsonl"),
            "eval_records": str(fixture_dir / "eval_records.jsonl"),
            "dataset": str(workdir / "dataset.jsonl"),
            "annotated_dataset": str(workdir / "dataset_annotated.jsonl"),
            "counterfactuals": str(workdir / "counterfactuals.jsonl"),
            "embeddings": str(workdir / "embeddings.bgem"),
            "cluster": str(workdir / "cluster.jsonl"),
            "projection": str(workdir / "projection.jsonl"),
            "manifests": str(workdir / "manifests"),
            "reports": str(workdir / "reports"),
            "checkpoints": str(workdir / "checkpoints"),
        },
        "embedding": {"url": embed_url, "encoder_tag": "scripted-16d", "batch_size": 64},
        **params,
    }
    path = workdir / "config.json"
    path.write_text(json.dumps(config, indent=2, sort_keys=True), encoding="utf-8")
    return path


def run_golden_pipeline(workdir: Path, embed_url: str, fixture_dir: Path = GOLDEN_DIR) -> str:
    """Run every stage; returns the sha256 of the final report.md."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    config = write_golden_config(workdir, embed_url, fixture_dir)
    for stage in STAGES:
        code = cli_main(["--config", str(config), *stage])
        if code != 0:
            raise RuntimeError(f"stage {' '.join(stage)} exited with {code}")
    return sha256_file(workdir / "reports" / "report.md")
