# Copyright 2026, the gtsa authors, All Rights Reserved
from typing import List

import pytest


def pytest_addoption(parser: pytest.Parser) -> None:
    parser.addoption('--run-slow', action='store_true', default=False,
                     help="Run the end-to-end reproduction tests too")


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line('markers', 'slow: long end-to-end reproduction, needs --run-slow')


def pytest_collection_modifyitems(config: pytest.Config, items: List[pytest.Item]) -> None:
    if config.getoption('--run-slow'):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip_slow)
