"""Command line: ``vlmexport --config job.json``.

Exit codes follow the engine's convention: 0 success, 1 validation error
(including any per-image failure), 2 I/O error.
"""

from __future__ import annotations

import argparse
import sys

from .encoder import DenseFeatureEncoder
from .export import export_bank, export_features
from .jobs import load_job


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="vlmexport", description=__doc__)
    parser.add_argument("--config", required=True, help="JSON job description")
    args = parser.parse_args(argv)
    try:
        job = load_job(args.config)
        encoder = DenseFeatureEncoder.from_pretrained(job.model)
        bank_path = export_bank(job, encoder)
        results = export_features(job, encoder)
    except OSError as err:
        sys.stderr.write(f"io error: {err}\n")
        return 2
    except ValueError as err:
        sys.stderr.write(f"error: {err}\n")
        return 1
    print(f"bank: {bank_path}")
    failures = 0
    for item in results:
        if item.ok:
            print(f"ok: {item.source} -> {item.output}")
        else:
            failures += 1
            sys.stderr.write(f"failed: {item.source}: {item.error}\n")
    return 1 if failures else 0


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
