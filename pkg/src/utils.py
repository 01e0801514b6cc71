"""
Utility functions for the Stateful Online Recommender Lab
"""

import os
import json
import hashlib
import logging
import tempfile
from typing import Dict, Any, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError

from config import LOG_LEVEL, LOG_FORMAT, LOG_FILE
from .exceptions import ConfigurationError


class ValidatedConfig(BaseModel):
    """Immutable configuration record; invalid values raise ConfigurationError"""

    model_config = ConfigDict(frozen=True, extra='forbid')

    def __init__(self, **data: Any):
        try:
            super().__init__(**data)
        except ValidationError as e:
            raise ConfigurationError(f"{type(self).__name__}: {e}") from e

    def replace(self, **changes: Any):
        """Validated copy with some fields changed"""
        return type(self)(**{**dict(self), **changes})


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit child seed of (seed, *keys)"""
    sequence = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def setup_logging(level: Optional[str] = None) -> logging.Logger:
    """Setup logging configuration"""

    # Create logs directory if it doesn't exist
    log_dir = os.path.dirname(LOG_FILE)
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)

    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.INFO),
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(LOG_FILE, encoding='utf-8'),
            logging.StreamHandler()
        ]
    )

    logger = logging.getLogger(__name__)
    logger.debug("Logging setup completed")

    return logger


def atomic_write_bytes(path: str, payload: bytes) -> None:
    """Write bytes to path via a sibling temp file and an atomic rename.

    A reader never observes a partially written file: either the previous
    content or the complete new content is visible at ``path``.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def file_sha256(path: str) -> str:
    """Hex SHA-256 digest of a file's contents"""
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(1 << 20), b''):
            digest.update(block)
    return digest.hexdigest()


def export_frame_to_csv(frame: pd.DataFrame, filepath: str) -> None:
    """Export a DataFrame to CSV atomically"""
    try:
        content = frame.to_csv(index=False, lineterminator='\n')
        atomic_write_bytes(filepath, content.encode('utf-8'))
        logging.getLogger(__name__).info(f"Data exported to {filepath}")
    except Exception as e:
        logging.getLogger(__name__).error(f"Failed to export data to {filepath}: {str(e)}")
        raise


def load_json_file(filepath: str) -> Dict[str, Any]:
    """Load a JSON document"""
    try:
        with open(filepath, 'r', encoding='utf-8') as f:
            return json.load(f)
    except Exception as e:
        logging.getLogger(__name__).error(f"Failed to load JSON file {filepath}: {str(e)}")
        raise


def save_json_file(data: Dict[str, Any], filepath: str) -> None:
    """Save a JSON document with stable key order"""
    try:
        content = json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
        atomic_write_bytes(filepath, content.encode('utf-8'))
    except Exception as e:
        logging.getLogger(__name__).error(f"Failed to save JSON file {filepath}: {str(e)}")
        raise
