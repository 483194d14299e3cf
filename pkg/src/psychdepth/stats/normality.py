"""Shapiro-Wilk W test following Royston's AS R94 algorithm."""
from __future__ import annotations

import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np

from .errors import SampleSizeOutOfRange, ZeroVariance

_STD_NORMAL = NormalDist()

# polynomial coefficients, lowest order first
_C1 = (0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.544, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)
_SMALL = 1e-19


@dataclass(frozen=True)
class NormalityResult:
    W: float
    p_value: float
    n: int


def _poly(coef: Sequence[float], x: float) -> float:
    result = 0.0
    for c in reversed(coef):
        result = result * x + c
    return result


def shapiro_coefficients(n: int) -> np.ndarray:
    """Upper-half coefficients a_1 >= a_2 >= ... (length n // 2)."""
    nn2 = n // 2
    if n == 3:
        return np.array([math.sqrt(0.5)])
    an25 = n + 0.25
    m = np.array([_STD_NORMAL.inv_cdf((i - 0.375) / an25) for i in range(1, nn2 + 1)])
    summ2 = 2.0 * float(np.sum(m * m))
    ssumm2 = math.sqrt(summ2)
    rsn = 1.0 / math.sqrt(n)
    a1 = _poly(_C1, rsn) - m[0] / ssumm2
    a = m.copy()
    if n > 5:
        first = 2
        a2 = -m[1] / ssumm2 + _poly(_C2, rsn)
        fac = math.sqrt((summ2 - 2.0 * m[0] ** 2 - 2.0 * m[1] ** 2) / (1.0 - 2.0 * a1**2 - 2.0 * a2**2))
        a[1] = a2
    else:
        first = 1
        fac = math.sqrt((summ2 - 2.0 * m[0] ** 2) / (1.0 - 2.0 * a1**2))
    a[0] = a1
    a[first:] = -m[first:] / fac
    return a


def shapiro_wilk(samples: Sequence[float]) -> NormalityResult:
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n < 3 or n > 5000:
        raise SampleSizeOutOfRange(f"Shapiro-Wilk needs 3 <= n <= 5000, got {n}")
    x = x - np.median(x)
    spread = x[-1] - x[0]
    if spread < _SMALL or spread <= 1e-12 * max(abs(x[0]), abs(x[-1])):
        raise ZeroVariance("sample has zero variance")

    a = shapiro_coefficients(n)
    half = a.size
    coef = np.zeros(n)
    coef[:half] = -a
    coef[n - half:] = a[::-1]

    xs = x / spread
    ca = coef - coef.mean()
    cx = xs - xs.mean()
    ssa = float(np.dot(ca, ca))
    ssx = float(np.dot(cx, cx))
    sax = float(np.dot(ca, cx))
    ssassx = math.sqrt(ssa * ssx)
    w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx)
    w = 1.0 - w1

    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(max(w, 0.75))) - math.pi / 3.0)
        return NormalityResult(w, min(1.0, max(0.0, p)), n)

    if w1 <= 0.0:
        return NormalityResult(w, 1.0, n)
    y = math.log(w1)
    if n <= 11:
        gamma = _poly(_G, n)
        if y >= gamma:
            return NormalityResult(w, 1e-99, n)
        y = -math.log(gamma - y)
        mean = _poly(_C3, n)
        sd = math.exp(_poly(_C4, n))
    else:
        ln_n = math.log(n)
        mean = _poly(_C5, ln_n)
        sd = math.exp(_poly(_C6, ln_n))
    p = 1.0 - _STD_NORMAL.cdf((y - mean) / sd)
    if p < 1e-12:
        p = 0.5 * math.erfc((y - mean) / sd / math.sqrt(2.0))
    return NormalityResult(w, p, n)
