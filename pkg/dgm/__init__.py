# dgm/__init__.py
"""
Disjoint generative models for tabular data.

Columns of a training table are split into disjoint partitions, each partition
is synthesized by its own generator and the outputs are rejoined by random
concatenation or by a trained joining validator.
"""
import logging
import os

from dotenv import load_dotenv

load_dotenv()

__version__ = "0.1.0"

logging.getLogger("dgm").addHandler(logging.NullHandler())


def max_jobs(requested: int | None = None) -> int:
    """
    Resolve the number of parallel workers.

    Args:
        requested (int or None): Worker count asked for on the command line or in code
    Returns:
        int: Worker count, capped by the DGM_JOBS environment variable when set
    """
    jobs = requested if requested and requested > 0 else 1
    cap = os.getenv("DGM_JOBS")
    if cap:
        try:
            jobs = min(jobs, max(int(cap), 1))
        except ValueError:
            logging.getLogger("dgm").warning(f"Ignoring non-integer DGM_JOBS={cap!r}")
    return jobs
