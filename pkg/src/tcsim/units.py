"""Unit handling at the configuration boundary.

Kernels only ever see angular frequencies (hbar = 1). Config values may be
plain numbers, taken as already angular, or strings with a unit suffix::

    "28 kHz"   -> 2*pi*28e3
    "1e6 rad/s" -> 1e6
    "3322.95 G" -> electron Larmor angular frequency at that field

Time is then measured in the reciprocal of whatever angular unit was used,
e.g. seconds when every frequency is given in Hz-based units.
"""
from __future__ import annotations

import math
import re

import numpy as np
from scipy import constants

FREE_ELECTRON_G = -constants.physical_constants["electron g factor"][0]
# Bohr magneton / h in Hz per gauss
BOHR_HZ_PER_GAUSS = constants.physical_constants["Bohr magneton in Hz/T"][0] * 1e-4

_CYCLIC = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}
_ANGULAR = {"rad/s": 1.0, "rad/time": 1.0, "rad": 1.0, "krad/s": 1e3, "mrad/s": 1e6}
_FIELD = {"g": 1.0, "mg": 1e-3, "t": 1e4, "mt": 10.0}

_QUANTITY = re.compile(r"^\s*([-+0-9.eE]+)\s*([A-Za-z/]+)?\s*$")


def field_to_angular_frequency(field_gauss, g_factor=FREE_ELECTRON_G):
    """Larmor angular frequency ``g * mu_B * B / hbar`` for a field in gauss."""
    return 2.0 * math.pi * g_factor * BOHR_HZ_PER_GAUSS * field_gauss


def angular_frequency_to_field(omega, g_factor=FREE_ELECTRON_G):
    return omega / (2.0 * math.pi * g_factor * BOHR_HZ_PER_GAUSS)


def parse_frequency(value) -> float:
    if isinstance(value, (int, float, np.floating, np.integer)):
        return float(value)
    m = _QUANTITY.match(str(value))
    if not m:
        raise ValueError(f"cannot parse frequency {value!r}")
    number = float(m.group(1))
    unit = (m.group(2) or "").strip()
    if not unit:
        return number
    key = unit.lower()
    # case matters for mT vs MHz-style prefixes only in field units
    if unit in ("G", "mG", "T", "mT"):
        return field_to_angular_frequency(number * _FIELD[key])
    if key in _CYCLIC:
        return 2.0 * math.pi * number * _CYCLIC[key]
    if key in _ANGULAR:
        return number * _ANGULAR[key]
    raise ValueError(f"unknown frequency unit {unit!r} in {value!r}")


def parse_coupling(value):
    """Scalar, nested list, ``{re, im}`` mapping or complex string -> complex array-like."""
    if value is None:
        return 0.0
    if isinstance(value, str):
        try:
            return complex(value.replace(" ", ""))
        except ValueError:
            return parse_frequency(value)
    if isinstance(value, dict):
        return complex(parse_frequency(value.get("re", 0.0)), parse_frequency(value.get("im", 0.0)))
    if isinstance(value, (list, tuple)):
        return np.array([parse_coupling(v) for v in value], dtype=complex)
    return complex(value)
