"""Launcher that applies MAGLINK_THREADS before numpy is imported."""

import os
import sys


def main() -> int:
    threads = os.environ.get("MAGLINK_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    from maglink.cli import main as run

    return run()


if __name__ == "__main__":
    sys.exit(main())
