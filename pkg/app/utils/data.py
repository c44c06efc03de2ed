import json
import math
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from app.schemas.exception import InputException


class DataUtils:
    @staticmethod
    def parse_observations(text: str) -> np.ndarray:
        """One number per line; blank lines are skipped and a non-numeric
        first line is taken as a header.

        :param text: file content
        :return: observations as a float array
        """
        values = []
        seen_content = False
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                value = float(line)
            except ValueError:
                if not seen_content:
                    seen_content = True
                    continue
                raise InputException(f"not a number: {line!r}", line=number) from None
            seen_content = True
            if not math.isfinite(value):
                raise InputException(f"non-finite value {line!r}", line=number)
            values.append(value)
        if not values:
            raise InputException("no observations")
        return np.asarray(values, dtype=float)

    @staticmethod
    def read_observations(path: Path, minimum: int = 2) -> np.ndarray:
        """Reads an observation file, requiring at least ``minimum`` values."""
        try:
            raw = Path(path).read_bytes()
        except OSError as err:
            raise InputException(f"cannot read {path}: {err}") from err
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as err:
            line = raw.count(b"\n", 0, err.start) + 1
            raise InputException(f"{path}: not valid UTF-8 text", line=line) from None
        values = DataUtils.parse_observations(text)
        if values.size < minimum:
            raise InputException(
                f"at least {minimum} observations required, got {values.size}"
            )
        return values

    @staticmethod
    def parse_floats(text: str) -> list[float]:
        """Comma separated list of floats, e.g. ``0.5,0.75,1``."""
        try:
            return [float(part) for part in text.split(",") if part.strip()]
        except ValueError as err:
            raise InputException(f"invalid number list {text!r}") from err

    @staticmethod
    def dumps(document: Any) -> str:
        return json.dumps(document, indent=2, sort_keys=True)

    @staticmethod
    def frame_csv(frame: pd.DataFrame) -> str:
        return frame.to_csv(index=False)
