import logging

import pytest

from i2iunlearn.config import from_dict
from i2iunlearn.experiment import Experiment

# Reduced desk scenario shared by pipeline-level unit tests; the full-size
# scenario lives in test_acceptance.py.
SMALL = {
    "corpus": {"n_per_class": 60},
    "train": {"epochs": 60},
    "unlearn": {"unlearn_epochs": 5, "finetune_epochs": 10},
    "baselines": {"epochs": 3},
}


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    logging.getLogger("i2iunlearn").setLevel(logging.ERROR)
    cfg = from_dict({**SMALL, "output_dir": str(tmp_path_factory.mktemp("desk"))})
    exp = Experiment(cfg)
    exp.model("original")
    exp.model("attack")
    return exp


# one line per acceptance criterion, echoed in the terminal summary
CRITERIA: dict[int, str] = {}


@pytest.fixture
def record():
    def _record(n: int, ok: bool, detail: str) -> None:
        CRITERIA[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(CRITERIA[n])

    return _record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
