from .asymptotics import AsymptoticSummary as AsymptoticSummary
from .asymptotics import CurvePoint as CurvePoint
from .asymptotics import EigenRow as EigenRow
from .asymptotics import ExpectationMeta as ExpectationMeta
from .asymptotics import OptimalQ as OptimalQ
from .asymptotics import OverlayRow as OverlayRow
from .asymptotics import SandwichMatrices as SandwichMatrices
from .asymptotics import SurfaceRow as SurfaceRow
from .asymptotics import VqRow as VqRow
from .asymptotics import WeightedChiSquare as WeightedChiSquare
from .estimation import EstimationResult as EstimationResult
from .estimation import ScoreSum as ScoreSum
