from enum import Enum


# Direction of the alternative hypothesis
class Alternative(Enum):
    # H1: parameter > null value
    Greater = "greater"
    # H1: parameter < null value
    Less = "less"
    # H1: parameter != null value
    TwoSided = "two-sided"

    @classmethod
    def parse(cls, value: "str | Alternative") -> "Alternative":
        """Accepts the enum, its value, or the snake-case spellings."""
        if isinstance(value, Alternative):
            return value
        normalized = str(value).strip().lower().replace("_", "-")
        aliases = {
            "one-sided-greater": "greater",
            "one-sided-less": "less",
            "two.sided": "two-sided",
        }
        return cls(aliases.get(normalized, normalized))


# Test procedures reported in a TestResult
class TestMethod(Enum):
    __test__ = False

    # Lq-likelihood ratio test
    Lqlr = "lqlr"
    # Classical likelihood ratio, i.e. the one-sample t test
    LrT = "lr_t"
    # Wilcoxon signed-rank test
    Wilcoxon = "wilcoxon"
    # Sign test
    Sign = "sign"
    # Huber's censored likelihood ratio test
    Huber = "huber"
    # Known-variance z test
    Z = "z"


# How expectations under the gross error model are evaluated
class ExpectationMethod(Enum):
    # Adaptive quadrature, univariate observations only
    Quadrature = "quadrature"
    # Seeded Monte Carlo
    MonteCarlo = "monte_carlo"


# Contamination component shapes
class ContaminationKind(Enum):
    # Normal with its own centre and variance
    Normal = "normal"
    # Normal with variance 1e-4 standing in for a point mass
    PointMass = "point_mass"


# Rows of an experiment table
class ResultKind(Enum):
    Size = "size"
    Power = "power"
    # Same rates with critical values simulated from the known null model
    SizeOracle = "size_oracle"
    PowerOracle = "power_oracle"


# Output document format of the command line
class OutputFormat(Enum):
    Csv = "csv"
    Json = "json"


# Families an experiment can be run under
class FamilyName(Enum):
    # N(mu, sigma^2), sigma known
    NormalKnownVariance = "normal_known_variance"
    # N(mu, sigma^2), both unknown
    NormalLocationScale = "normal_location_scale"
