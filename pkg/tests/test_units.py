import math

import numpy as np
import pytest

from tcsim.units import (angular_frequency_to_field, field_to_angular_frequency, parse_coupling,
                         parse_frequency)


@pytest.mark.parametrize("text, value", [
    (1.5, 1.5),
    ("2.5", 2.5),
    ("28 kHz", 2 * math.pi * 28e3),
    ("1 MHz", 2 * math.pi * 1e6),
    ("9.4GHz", 2 * math.pi * 9.4e9),
    ("3 rad/s", 3.0),
    ("0.25 rad/time", 0.25),
])
def test_parse_frequency(text, value):
    assert parse_frequency(text) == pytest.approx(value)


def test_field_units():
    # free electron: about 2.8025 MHz per gauss
    w = parse_frequency("1 G")
    assert w / (2 * math.pi) == pytest.approx(2.8025e6, rel=1e-4)
    assert parse_frequency("1 mT") == pytest.approx(10 * w)
    assert parse_frequency("3322.95 G") / (2 * math.pi * 1e9) == pytest.approx(9.313, rel=1e-3)
    assert angular_frequency_to_field(field_to_angular_frequency(3322.95)) == pytest.approx(3322.95)


def test_bad_units():
    with pytest.raises(ValueError):
        parse_frequency("3 furlongs")
    with pytest.raises(ValueError):
        parse_frequency("fast")


def test_parse_coupling_forms():
    assert parse_coupling(None) == 0.0
    assert parse_coupling(0.1) == 0.1
    assert parse_coupling("0.1+0.2j") == 0.1 + 0.2j
    assert parse_coupling({"re": 0.1, "im": -0.3}) == 0.1 - 0.3j
    assert parse_coupling("28 kHz") == pytest.approx(2 * math.pi * 28e3)
    arr = parse_coupling([[0.1, "0.2j"], [0, 1]])
    assert np.array_equal(arr, np.array([[0.1, 0.2j], [0, 1]]))
