from .layout import BlockDims, ProblemDims
from .matrix import BlockedMatrix
