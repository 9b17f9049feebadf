import json

import pytest

from fixtures import captions_doc, instances_doc, write_corpus


@pytest.fixture
def corpus(tmp_path):
    return write_corpus(tmp_path / "corpus")


@pytest.fixture
def instances_path(tmp_path):
    p = tmp_path / "instances.json"
    p.write_text(json.dumps(instances_doc()))
    return p


@pytest.fixture
def captions_path(tmp_path):
    p = tmp_path / "captions.json"
    p.write_text(json.dumps(captions_doc()))
    return p


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import summary_lines

    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
