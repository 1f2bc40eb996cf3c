#!/usr/bin/env python3
"""Run the end-to-end golden pipeline against the bundled fixture.

With --freeze, records the resulting report digest as the golden reference;
without it, compares against the recorded digest and exits non-zero on drift.
"""

import argparse
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))
sys.path.insert(0, str(ROOT / "tests"))

from golden_utils import GOLDEN_DIR, golden_embed_fn, run_golden_pipeline  # noqa: E402
from mock_api import MockApi  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default=None, help="where to place artifacts (default: temp dir)")
    parser.add_argument("--freeze", action="store_true", help="record the digest as the golden reference")
    args = parser.parse_args()

    workdir = Path(args.workdir) if args.workdir else Path(tempfile.mkdtemp(prefix="benchgap-golden-"))
    api = MockApi(embed_fn=golden_embed_fn()).start()
    try:
        digest = run_golden_pipeline(workdir, api.embed_url)
    finally:
        api.stop()

    golden_path = GOLDEN_DIR / "report.sha256"
    print(f"report digest: {digest}")
    print(f"artifacts in:  {workdir}")
    if args.freeze:
        golden_path.write_text(digest + "\n", encoding="utf-8")
        print(f"frozen to {golden_path}")
        return 0
    if not golden_path.exists():
        print("no golden digest recorded yet; run with --freeze first", file=sys.stderr)
        return 1
    expected = golden_path.read_text(encoding="utf-8").strip()
    if digest != expected:
        print(f"MISMATCH: expected {expected}", file=sys.stderr)
        return 1
    print("matches the golden reference")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
