"""Bundled data sets."""

# Differences in hours of sleep gained between two hyoscyamine isomers,
# ten patients (Cushny and Peebles, 1905)
SLEEP_DIFFERENCES: tuple[float, ...] = (1.2, 2.4, 1.3, 1.3, 0.0, 1.0, 1.8, 0.8, 4.6, 1.4)

# Position of the suspicious ninth patient
SLEEP_OUTLIER_INDEX = 8


def sleep_differences(delta9: float | None = None) -> list[float]:
    """The sleep differences, optionally with the ninth value replaced."""
    values = list(SLEEP_DIFFERENCES)
    if delta9 is not None:
        values[SLEEP_OUTLIER_INDEX] = float(delta9)
    return values
