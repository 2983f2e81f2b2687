import pytest

from obdkit.core import DesignConfig, DoseGrid, TitrationRule, UtilitySpec


@pytest.fixture
def spec():
    return UtilitySpec.canonical()


@pytest.fixture
def config():
    return DesignConfig()


@pytest.fixture
def titration_config():
    return DesignConfig(accelerated_titration=TitrationRule(trigger_grade=2, trigger_dose_index=5))


@pytest.fixture
def grid8():
    return DoseGrid.from_amounts([0.15, 1.2, 8, 24, 80, 240, 800, 1400])
