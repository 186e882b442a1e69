"""Shared fixtures: the full default validation campaign, run once."""

import time
from collections import namedtuple

import pytest

from ldphist.validation import RunConfig, run_validation

CampaignRun = namedtuple("CampaignRun", ["report", "elapsed_seconds"])


@pytest.fixture(scope="session")
def default_campaign():
    start = time.perf_counter()
    report = run_validation(RunConfig())
    return CampaignRun(report, time.perf_counter() - start)
