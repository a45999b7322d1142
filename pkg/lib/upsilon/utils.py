"""Module containing common function.
"""

import hashlib
import os
import traceback

import numpy as np
from threadpoolctl import threadpool_limits

import config as cfg


def cell_seed(base_seed: int, seed_index: int):
    """Derives the seed of an experiment cell.

    Cells are reproducible in isolation, so the seed only depends on the
    base seed of the experiment and the index of the repetition.

    Args:
        base_seed: Seed of the experiment.
        seed_index: Index of the repetition.

    Returns:
        base_seed * 1000 + seed_index
    """
    return int(base_seed) * 1000 + int(seed_index)


def derived_rng(seed: int, *keys: int):
    """Returns a generator for a sub-stream of `seed`.

    Used for per-class and per-trial streams that must not depend on the
    order in which they are consumed.

    Args:
        seed: The parent seed.
        keys: Integers that identify the sub-stream.

    Returns:
        A numpy `Generator`.
    """
    return np.random.default_rng([int(seed), *[int(k) for k in keys]])


def git_blob_hash(content: bytes):
    """Hashes content the way git hashes a blob object.

    Args:
        content: Raw bytes of the file.

    Returns:
        The hex digest of sha1("blob <len>\\0" + content).
    """
    header = f"blob {len(content)}\0".encode("utf-8")

    return hashlib.sha1(header + content).hexdigest()


def file_hash(path: str):
    """git-style content hash of a file on disk."""
    with open(path, "rb") as f:
        return git_blob_hash(f.read())


def capped_workers(requested: int):
    """Caps the number of worker processes.

    The cap is read from the environment variable named in the config
    (`UPSILON_MAX_THREADS` by default). Invalid values are ignored.

    Args:
        requested: Number of workers asked for on the command line.

    Returns:
        The number of workers to start, at least 1.
    """
    workers = max(1, int(requested))
    cap = os.getenv(cfg.THREADS_ENV_VAR)

    if cap:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            print(f"Ignoring invalid {cfg.THREADS_ENV_VAR}={cap}", flush=True)

    return workers


def limit_blas_threads(n: int):
    """Limits the BLAS and OpenMP thread pools of the current process.

    Used as Pool initializer. numpy is already loaded in forked workers, so
    the pools are resized through threadpoolctl; the environment variables
    cover processes started from this one.
    """
    n = max(1, int(n))
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)

    return threadpool_limits(limits=n)


def clearErrorLog():
    """Clears the error log file.

    For debugging purposes.
    """
    if os.path.isfile(cfg.ERROR_LOG_FILE):
        os.remove(cfg.ERROR_LOG_FILE)


def writeErrorLog(ex: Exception):
    """Writes an exception to the error log.

    Formats the stacktrace and writes it in the error log file configured in the config.

    Args:
        ex: An exception that occurred.
    """
    with open(cfg.ERROR_LOG_FILE, "a") as elog:
        elog.write("".join(traceback.TracebackException.from_exception(ex).format()) + "\n")
