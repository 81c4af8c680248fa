import pytest

from vacmdt import ExplorationConfig, assemble, explore, parse_graph, reference_graph


def default_config(model, **kw) -> ExplorationConfig:
    return ExplorationConfig({s.name: v for s, v in zip(model.inputs, model.input_values)}, **kw)


@pytest.fixture(scope="session")
def uc1_model():
    return assemble(parse_graph(reference_graph("use_case_1")))


@pytest.fixture(scope="session")
def uc1_discovery(uc1_model):
    return explore(uc1_model, default_config(uc1_model))


@pytest.fixture(scope="session")
def uc2_model():
    return assemble(parse_graph(reference_graph("use_case_2")))


@pytest.fixture(scope="session")
def uc2_discovery(uc2_model):
    return explore(uc2_model, default_config(uc2_model))


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
