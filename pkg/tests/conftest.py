from __future__ import annotations

import os
import sys

# Set before numba is imported anywhere so thread-count tests have room to vary.
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(2, min(8, os.cpu_count() or 2))))

from hypothesis import settings  # noqa: E402

# The first call of a numba kernel compiles it, which can take seconds.
settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    # one verdict line per acceptance criterion that ran
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(mod.VERDICTS):
            terminalreporter.write_line(mod.VERDICTS[n])
