import pytest

from kenas.assets import default_rules_path, profile_path
from kenas.cost import load_profile
from kenas.fusion import load_rules


@pytest.fixture(scope="session")
def default_rules():
    return load_rules(str(default_rules_path()))


@pytest.fixture(scope="session")
def profile8():
    return load_profile(str(profile_path("parallel8")))


@pytest.fixture(scope="session")
def profile16():
    return load_profile(str(profile_path("parallel16")))
