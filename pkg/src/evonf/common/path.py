import logging
import shutil
from contextlib import suppress
from pathlib import Path
from typing import Final

from evonf.common.exceptions import DataIOError

logger = logging.getLogger(__name__)

SEED_DIR_PREFIX: Final = "seed-"


def mk_dir(path: Path, clean_if_exists: bool = False) -> Path:
    """Create an artifact directory, optionally emptying it first.

    Emptying is best effort: entries that cannot be removed are left in place.

    Args:
        path: directory to create, parents included
        clean_if_exists: remove everything already inside ``path``

    Returns:
        ``path``

    Raises:
        DataIOError: when ``path`` or one of its parents exists as a file, or cannot be created
    """
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"Cannot create directory {path}: {e}") from e
    if not clean_if_exists:
        return path
    for entry in path.iterdir():
        logger.debug("Removing %s", entry)
        if entry.is_dir():
            shutil.rmtree(entry, ignore_errors=True)
        else:
            with suppress(OSError):
                entry.unlink()
    return path


def seed_path(run_dir: Path, seed: int) -> Path:
    return run_dir / f"{SEED_DIR_PREFIX}{seed}"


def seed_dir(run_dir: Path, seed: int) -> Path:
    """Fresh per-seed directory below a run directory; a rerun replaces its contents."""
    return mk_dir(seed_path(run_dir, seed), clean_if_exists=True)
