import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from servescore.simulate import write_demo_slam_files  # noqa: E402

# filled by test_acceptance, printed at the end of the session
ACCEPTANCE_RESULTS: dict = {}


@pytest.fixture(scope="session")
def demo_data(tmp_path_factory):
    """Two synthetic Wimbledon seasons in the public slam file layout."""
    d = tmp_path_factory.mktemp("slam")
    write_demo_slam_files(d, seed=3, years=(2018, 2019), slams=("wimbledon",), n_players=30,
                          matches_per_year=32)
    return d


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        status, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{key}: {status}  {detail}")
