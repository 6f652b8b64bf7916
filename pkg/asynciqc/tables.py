"""CSV tables with a timestamp comment line and unit-annotated column headers."""

from datetime import datetime, timezone
from pathlib import Path

import pandas as pd

COMMENT = "#"


def annotate(frame: pd.DataFrame, units: dict) -> pd.DataFrame:
    return frame.rename(columns={c: f"{c} [{units[c]}]" for c in frame.columns if c in units})


def write_csv(frame: pd.DataFrame, path, units: dict = None) -> Path:
    """Write frame to path; only the first (comment) line depends on the clock."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if units:
        frame = annotate(frame, units)
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    with path.open("w", newline="") as fh:
        fh.write(f"{COMMENT} generated {stamp}\n")
        frame.to_csv(fh, index=False, lineterminator="\n", float_format="%.12g")
    return path


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment=COMMENT)
