# src/utils/logging.py
import logging
import os
import sys


def get_logger(name: str = "clearlens"):
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger
    level = os.getenv("CLEARLENS_LOG_LEVEL", "INFO").upper()
    logger.setLevel(getattr(logging, level, logging.INFO))
    handler = logging.StreamHandler(sys.stdout)
    fmt = logging.Formatter("[%(asctime)s] %(levelname)s %(name)s: %(message)s")
    handler.setFormatter(fmt)
    logger.addHandler(handler)
    return logger
