import hashlib
import json
import logging
import math
import os
from importlib import metadata
from pathlib import Path
from typing import Dict, Any, Optional, Union

import numpy as np


def setup_logging(name: str, log_file_path: Optional[Union[str, Path]] = None,
                  log_level: int = logging.INFO) -> logging.Logger:
    """Set up logging with console and (optionally) file handlers

    Args:
        name: Logger name
        log_file_path: Path to the log file, or None for console only
        log_level: Logging level (default: INFO)

    Returns:
        Configured logger instance
    """
    logger = logging.getLogger(name)
    logger.setLevel(log_level)

    # Clear existing handlers to avoid duplicates
    logger.handlers.clear()

    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file_path is not None:
        log_path = Path(log_file_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)

        file_handler = logging.FileHandler(log_path)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger


def parse_log_level(level: Union[str, int, None], default: int = logging.INFO) -> int:
    """Resolve a level name such as 'DEBUG' (or a number) to a logging level"""
    if level is None or level == '':
        return default
    if isinstance(level, int):
        return level
    if level.isdigit():
        return int(level)
    value = logging.getLevelName(level.upper())
    return value if isinstance(value, int) else default


def to_jsonable(value: Any) -> Any:
    """Convert numpy containers and scalars into plain JSON types

    Non-finite floats are encoded as the strings 'nan', 'inf' and '-inf'.
    """
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    return value


def from_json_float(value: Any) -> float:
    """Inverse of the float encoding used by to_jsonable; float() also parses the "nan"/"inf" strings"""
    return float(value)


def load_json_file(file_path: Union[str, Path], default: Any = None) -> Dict:
    """Load JSON data from a file

    Args:
        file_path: Path to the JSON file
        default: Default value if file doesn't exist or can't be parsed

    Returns:
        Loaded JSON data as dict or default value
    """
    if default is None:
        default = {}

    path = Path(file_path)
    if path.exists():
        try:
            with open(path) as f:
                return json.load(f)
        except (json.JSONDecodeError, IOError):
            pass

    return default


def save_json_file(file_path: Union[str, Path], data: Any, indent: int = 2) -> None:
    """Save data to a JSON file, creating the parent directory

    Args:
        file_path: Path to save the JSON file
        data: Data to save (numpy values are converted)
        indent: JSON indentation (default: 2)
    """
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(to_jsonable(data), f, indent=indent)


def check_and_create_dir(dir_path: Union[str, Path]) -> Path:
    """Create directory if it doesn't exist

    Args:
        dir_path: Directory path (``~`` is expanded)

    Returns:
        Path object for the directory
    """
    path = Path(os.path.expanduser(str(dir_path)))
    path.mkdir(parents=True, exist_ok=True)
    return path


def canonical_json(data: Any) -> str:
    """Serialize data with sorted keys and no whitespace"""
    return json.dumps(to_jsonable(data), sort_keys=True, separators=(',', ':'))


def config_hash(data: Any) -> str:
    """SHA-256 over the canonical JSON form of a configuration"""
    return hashlib.sha256(canonical_json(data).encode('utf-8')).hexdigest()


def package_version() -> str:
    """Installed package version, or 'unknown' when running from a source tree"""
    try:
        return metadata.version('lumino-stream-cert')
    except metadata.PackageNotFoundError:
        return 'unknown'
