"""Reference jump laws and the benchmark parameter set.

The Weibull(2, 1) and folded-normal laws are 6-phase EM fits, printed to four
decimals; ``alpha`` is renormalised after rounding.
"""

import numpy as np

from .model import PhaseTypeDistribution

SIGMA = 0.2
RHO = 1.5
ALPHA_RATE = -0.02
STRIKE = 100.0
DELTA = 0.5

WEIBULL_T = np.array(
    [
        [-5.6546, 0.0000, 0.0000, 0.0000, 0.0000, 0.0000],
        [0.6066, -5.6847, 0.0000, 0.0166, 0.0089, 5.0526],
        [0.2156, 4.3616, -5.6485, 0.9162, 0.1424, 0.0126],
        [5.6247, 0.0000, 0.0000, -5.6786, 0.0000, 0.0000],
        [0.0107, 0.0000, 0.0000, 5.7247, -5.7420, 0.0000],
        [0.0136, 0.0000, 0.0000, 0.0024, 5.7022, -5.7183],
    ]
)
WEIBULL_ALPHA = np.array([0.0000, 0.0007, 0.9961, 0.0000, 0.0001, 0.0031])

FOLDED_NORMAL_T = np.array(
    [
        [-4.0488, 0.0000, 0.0000, 0.0000, 0.0000, 0.0000],
        [0.1320, -4.0012, 0.0000, 0.0455, 3.7040, 0.0044],
        [0.2367, 0.8595, -4.2831, 0.1897, 0.2918, 2.3724],
        [3.1532, 0.0000, 0.0000, -4.0229, 0.0000, 0.0000],
        [0.2497, 0.0000, 0.0000, 3.7024, -4.0124, 0.0000],
        [0.0434, 2.1947, 0.0938, 0.1704, 0.1217, -4.9612],
    ]
)
FOLDED_NORMAL_ALPHA = np.array([0.0052, 0.0659, 0.7446, 0.0398, 0.0043, 0.1403])


def jump_law(name):
    if name == "exponential":
        return PhaseTypeDistribution.exponential(1.0)
    if name == "weibull":
        return PhaseTypeDistribution.from_rounded(WEIBULL_ALPHA, WEIBULL_T)
    if name == "folded_normal":
        return PhaseTypeDistribution.from_rounded(FOLDED_NORMAL_ALPHA, FOLDED_NORMAL_T)
    raise KeyError(f"unknown jump law {name!r}")


JUMP_LAWS = ("exponential", "weibull", "folded_normal")
