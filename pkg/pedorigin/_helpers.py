"""
Helper functions for pedorigin
"""

import math

import numpy as np
import requests
from tenacity import (
    retry,
    retry_if_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from pedorigin.exceptions import ValidationError

_basic_retry = retry(
    stop=stop_after_attempt(5),
    wait=wait_exponential(multiplier=1, min=4, max=10),
    retry=retry_if_exception_type(
        (requests.exceptions.ConnectionError, requests.exceptions.Timeout)
    ),
    reraise=True,
)


@_basic_retry
def _fetch_file(url: str, timeout: int = 60) -> bytes:
    """
    Wrapper around requests.get that retries on connection problems
    and returns the response body.
    """
    response = requests.get(url, timeout=timeout)
    response.raise_for_status()
    return response.content


def _rng(*keys: int) -> np.random.Generator:
    """
    Independent generator for a tuple of integer keys, e.g. (seed, tree_index).
    """
    return np.random.default_rng([int(k) & 0xFFFFFFFFFFFFFFFF for k in keys])


def _fmt(value: float) -> str:
    """
    Shortest text that reads back to the same float.
    """
    return repr(float(value))


def _require_positive(value: float, name: str) -> None:
    if not value > 0:
        raise ValidationError(f"{name} must be positive", field=name)


def _half_up(value: float) -> int:
    return int(math.floor(value + 0.5))
