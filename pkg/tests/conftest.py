"""Shared test plumbing.

Every filter invocation made anywhere in the suite goes through a recorder that
keeps the worst normalization error and the smallest entry seen; the belief
normalization acceptance check reads it after all other tests have run.
Acceptance tests carry a ``criterion`` marker and get one summary line each.
"""

from __future__ import annotations

import functools
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from navnet import model as _model  # noqa: E402
from navnet import oracle as _oracle  # noqa: E402


class BeliefRecorder:
    def __init__(self):
        self.calls = 0
        self.worst_sum_error = 0.0
        self.min_entry = np.inf

    def observe(self, belief: np.ndarray, axes):
        self.calls += 1
        sums = belief.sum(axis=axes)
        self.worst_sum_error = max(self.worst_sum_error, float(np.abs(sums - 1.0).max()))
        self.min_entry = min(self.min_entry, float(belief.min()))


RECORDER = BeliefRecorder()


def _wrap(fn, extract):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        out = fn(*args, **kwargs)
        RECORDER.observe(*extract(out))
        return out

    return wrapper


_model.filter_step = _wrap(_model.filter_step, lambda out: (out[0].data, (1, 2, 3)))
_oracle.exact_filter_step = _wrap(_oracle.exact_filter_step, lambda out: (out[0], None))

ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")
    config.addinivalue_line("markers", "last: run after every other test")


def pytest_collection_modifyitems(session, config, items):
    # the normalization check must see every filter call
    items.sort(key=lambda item: item.get_closest_marker("last") is not None)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    n, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed and not detail:
        detail = str(rep.longrepr).strip().splitlines()[-1][:160]
    ACCEPTANCE[n] = ("PASS" if rep.passed else "FAIL", title, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{status}] criterion {n:2d}: {title}" + (f" -- {detail}" if detail else ""))
