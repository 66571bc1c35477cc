import pytest

from cooplane.corpus import load_fixture
from cooplane.inference import default_rules, enumerate_feasible
from cooplane.lookup import build_table
from cooplane.semantics import make_ontology


@pytest.fixture(scope="session")
def onto2():
    return make_ontology(2)


@pytest.fixture(scope="session")
def onto3():
    return make_ontology(3)


@pytest.fixture(scope="session")
def fixture2():
    return load_fixture(2)


@pytest.fixture(scope="session")
def fixture3():
    return load_fixture(3)


@pytest.fixture(scope="session")
def feasible2(onto2):
    return list(enumerate_feasible(onto2, default_rules(onto2)))


@pytest.fixture(scope="session")
def table2(fixture2):
    model, _ = fixture2
    return build_table(model.ontology, default_rules(model.ontology), model)
