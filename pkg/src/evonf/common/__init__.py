import logging
from hashlib import blake2s
from pathlib import Path
from typing import Final, Iterable

from environs import Env

env: Env = Env()

# define logger for output to console
logger: logging.Logger = logging.getLogger(__name__)

OUTPUT_DIR: Final[Path] = env.path("EVONF_OUTPUT_DIR", Path("artifacts"))
LOGLEVEL: Final[str] = env.str("LOGLEVEL", "INFO").upper()

LOG_FORMAT: Final = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: str = LOGLEVEL) -> None:
    """Configure the root logger for command line runs.

    Library modules only create loggers; handlers are attached here, once, by the entry point.

    Args:
        level: name of the log level, eg ``"INFO"`` or ``"DEBUG"``
    """
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT)


def make_hash(composite_values: Iterable[str], digest_size: int = 8) -> int:
    """Construct a hash value.

    The blake2s algorithm is used to generate a single hashed value for
    composite values, eg the rendered rows of a dataset.

    Args:
        composite_values: string values that together identify the hashed object
        digest_size: size to set the max bytes to use for the hash

    Returns:
        the hashed value of the composite values as int
    """
    return int.from_bytes(
        blake2s("|".join(composite_values).encode(), digest_size=digest_size).digest(),
        byteorder="little",
    )
