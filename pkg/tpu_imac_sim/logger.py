import logging
import os

from dotenv import find_dotenv, load_dotenv
from rich.console import Console
from rich.logging import RichHandler

from tpu_imac_sim.defaults import ENV_LOG_LEVEL

load_dotenv(find_dotenv(usecwd=True))

console = Console(stderr=True)


def _build_logger() -> logging.Logger:
    log = logging.getLogger("tpu_imac_sim")
    if not log.handlers:
        handler = RichHandler(console=console, show_path=False, markup=False)
        handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
        log.addHandler(handler)
    level = os.getenv(ENV_LOG_LEVEL, "INFO").upper()
    if level not in logging.getLevelNamesMapping():
        level = "INFO"
    log.setLevel(level)
    log.propagate = False
    return log


logger = _build_logger()
