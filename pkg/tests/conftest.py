import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from emtts.corpus import build_corpus  # noqa: E402
from emtts.toy import write_toy_corpus  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    return write_toy_corpus(tmp_path_factory.mktemp("toy"))


@pytest.fixture(scope="session")
def toy_corpus(toy_root):
    return build_corpus(toy_root / "metadata.tsv", toy_root / "wavs", out_dir=toy_root / "cache",
                        threads=1)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
