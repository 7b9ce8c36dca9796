import logging

import pytest

from src.app.logging_setup import LOGGER_NAME


@pytest.fixture(autouse=True)
def _detach_log_handlers():
    """CLI runs attach handlers to captured streams; drop them after each test."""
    yield
    logger = logging.getLogger(LOGGER_NAME)
    for h in list(logger.handlers):
        logger.removeHandler(h)
        h.close()
