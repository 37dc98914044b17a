import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from dotenv import load_dotenv
from lumino.stream_cert.constants import (
    DEFAULT_LUMINO_DIR,
    DEFAULT_OUTPUT_DIR,
    ENV_VAR_CONFIG,
    ENV_VAR_LOG_LEVEL,
    ENV_VAR_OUTPUT_DIR,
    ENV_VAR_WORKERS,
    LOG_FILE_NAME,
    LOGGER_NAME,
)
from lumino.stream_cert.error_handler import DomainError, ParseError
from lumino.stream_cert.harness import ExperimentConfig
from lumino.stream_cert.utils import check_and_create_dir, parse_log_level, setup_logging


def load_environment() -> None:
    """Load environment variables from .env files"""
    # Load local env vars
    load_dotenv('./.env', override=True)

    # Load user env vars
    load_dotenv(os.path.expanduser(f'{DEFAULT_LUMINO_DIR}/.env'), override=True)


def output_dir_from_env() -> str:
    return os.getenv(ENV_VAR_OUTPUT_DIR) or DEFAULT_OUTPUT_DIR


def workers_from_env() -> int:
    value = os.getenv(ENV_VAR_WORKERS)
    if not value:
        return 1
    try:
        return int(value)
    except ValueError:
        raise DomainError(f"{ENV_VAR_WORKERS} must be an integer, got {value!r}")


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Read an experiment config JSON object

    Raises:
        ParseError: If the file is not a JSON object
    """
    path = Path(os.path.expanduser(str(path)))
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON ({e.msg})", row=e.lineno, path=str(path))
    if not isinstance(data, dict):
        raise ParseError("config must be a JSON object", path=str(path))
    return data


def resolve_experiment_config(overrides: Optional[Mapping[str, Any]] = None,
                              config_path: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """Layer defaults < environment < JSON config file < explicit overrides

    Args:
        overrides: Values given on the command line; None entries are ignored
        config_path: JSON config file; falls back to SC_CONFIG

    Returns:
        Validated ExperimentConfig
    """
    data: Dict[str, Any] = {
        'output_dir': output_dir_from_env(),
        'workers': workers_from_env(),
    }
    config_path = config_path or os.getenv(ENV_VAR_CONFIG)
    if config_path:
        data.update(read_config_file(config_path))
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return ExperimentConfig.from_dict(data)


def setup_cli_logging(output_dir: Optional[str] = None) -> logging.Logger:
    """Console + file logger for a CLI run, level from SC_LOG_LEVEL"""
    output_dir = check_and_create_dir(output_dir or output_dir_from_env())
    return setup_logging(LOGGER_NAME, output_dir / LOG_FILE_NAME,
                         parse_log_level(os.getenv(ENV_VAR_LOG_LEVEL)))
