#!/usr/bin/env python3
"""Generate the bundled synthetic fixture used by the end-to-end golden run.

600 problems across three lexical topics, scripted 16-dim embeddings with a
clear 3-cluster structure, and pre-scored eval records for a "core" and a
"base" model. Everything is seeded; re-running reproduces identical files.
"""

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from benchgap.embed import EmbeddingMatrix, save_embeddings  # noqa: E402

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "golden"

TOPICS = ("algebra", "geometry", "counting")
NOUNS = {
    "algebra": ("root", "coefficient", "remainder"),
    "geometry": ("area", "perimeter", "angle"),
    "counting": ("arrangements", "subsets", "paths"),
}
N = 600
DIM = 16
SEED = 20240811


def build_problems(rng):
    problems = []
    for i in range(N):
        topic = TOPICS[i % 3]
        noun = NOUNS[topic][i % len(NOUNS[topic])]
        a, b = int(rng.integers(2, 50)), int(rng.integers(2, 50))
        problems.append(
            {
                "id": f"g{i:04d}",
                "statement": f"[{topic}] task {i}: find the {noun} given values {a} and {b}.",
                "answer": str((a + b) % 97),
                "source": "synthetic",
                "difficulty": f"L{(i * 7) % 5 + 1}",
            }
        )
    return problems


def build_embeddings(problems, rng):
    bases = np.zeros((3, DIM), dtype=np.float64)
    for t in range(3):
        bases[t, t] = 10.0
    vectors = np.empty((N, DIM), dtype=np.float32)
    for i in range(N):
        topic_index = i % 3
        vectors[i] = (bases[topic_index] + rng.normal(0.0, 0.6, size=DIM)).astype(np.float32)
    return EmbeddingMatrix(
        ids=[p["id"] for p in problems], vectors=vectors, encoder_tag="scripted-16d"
    )


def core_topic(matrix) -> int:
    """The dominant topic of the cluster the core will be selected from."""
    from collections import Counter

    from benchgap.geometry import kmeans

    model = kmeans(matrix.vectors, PARAMS["clustering"]["k"], PARAMS["seeds"]["cluster"])
    members = [i for i, c in enumerate(model.assignments) if c == PARAMS["split"]["target_cluster"]]
    return Counter(i % 3 for i in members).most_common(1)[0][0]


def build_eval_records(problems, rng, strong_topic: int):
    records = []
    for i, p in enumerate(problems):
        p_core = 0.80 if i % 3 == strong_topic else 0.45
        records.append(
            {
                "model_id": "core",
                "problem_id": p["id"],
                "outcome": "pass" if rng.random() < p_core else "fail",
            }
        )
        records.append(
            {
                "model_id": "base",
                "problem_id": p["id"],
                "outcome": "pass" if rng.random() < 0.55 else "fail",
            }
        )
    return records


PARAMS = {
    "clustering": {"k": 3, "k_range": [2, 6]},
    "tsne": {
        "perplexity": 25.0,
        "learning_rate": 200.0,
        "iterations": 400,
        "early_exaggeration": 12.0,
        "early_exaggeration_iters": 120,
        "theta": 0.5,
        "pca_dim": 50,
        "exact_limit": 5000,
        "kl_log_every": 50,
    },
    "split": {"target_cluster": 0, "core_m": 120, "n_bins": 5, "per_bin": 40, "per_level": 20},
    "thresholds": {"opg_negligible": "0.02", "opg_substantial": "0.10", "collapse_drop": "0.25"},
    "seeds": {"cluster": 11, "tsne": 12, "sampling": 13},
    "report": {"decimals": 2},
}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(SEED)
    problems = build_problems(rng)
    with open(OUT / "problems.jsonl", "w", encoding="utf-8") as fh:
        for p in problems:
            fh.write(json.dumps(p, sort_keys=True, separators=(",", ":")) + "\n")
    matrix = build_embeddings(problems, rng)
    save_embeddings(matrix, OUT / "embeddings.bgem")
    strong_topic = core_topic(matrix)
    with open(OUT / "eval_records.jsonl", "w", encoding="utf-8") as fh:
        for r in build_eval_records(problems, rng, strong_topic):
            fh.write(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n")
    with open(OUT / "params.json", "w", encoding="utf-8") as fh:
        json.dump(PARAMS, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"fixture written to {OUT}")


if __name__ == "__main__":
    main()
