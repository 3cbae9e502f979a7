"""Power and sample size for the projection-based two-sample test on sparse
functional data, with a Monte Carlo harness that checks the formulas."""

from sparsepass.hotelling import TestResult, hotelling_test
from sparsepass.power import (
    PowerRequest,
    PowerResult,
    SampleSizeResult,
    UnreachableTargetError,
    algorithm1_power,
    algorithm2_samplesize,
    prepare_power,
)
from sparsepass.process import CAR1, CompoundSymmetry, MeanDiff, NonStationaryRank2, SamplingDesign

__version__ = "0.1.0"

__all__ = [
    "CAR1",
    "CompoundSymmetry",
    "MeanDiff",
    "NonStationaryRank2",
    "PowerRequest",
    "PowerResult",
    "SampleSizeResult",
    "SamplingDesign",
    "TestResult",
    "UnreachableTargetError",
    "algorithm1_power",
    "algorithm2_samplesize",
    "hotelling_test",
    "prepare_power",
]
