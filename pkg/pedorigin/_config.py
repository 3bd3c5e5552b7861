"""
Handles environment-based configuration.
Largely just checking that the variables a command needs are set.
"""

import functools
import os

from pedorigin.exceptions import ValidationError

DATA_URL_VAR = "PEDORIGIN_DATA_URL"
LOG_LEVEL_VAR = "PEDORIGIN_LOG_LEVEL"


def log_level() -> str:
    return os.environ.get(LOG_LEVEL_VAR, "WARNING").upper()


class Decorators:

    @staticmethod
    def check_env_vars(decorated):
        """
        Decorator to check if the archive location is set in the environment
        """

        @functools.wraps(decorated)
        def wrapper(*args, **kwargs):
            if DATA_URL_VAR not in os.environ:
                raise ValidationError(
                    f"{DATA_URL_VAR} not found in environment variables.",
                    field=DATA_URL_VAR,
                )
            return decorated(*args, **kwargs)

        return wrapper
