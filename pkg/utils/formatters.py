"""Utility functions for formatting results for display."""
import math

import numpy as np


def format_duration(seconds: float) -> str:
    """Format a duration in seconds like the comparison table does.

    Args:
        seconds: Duration to format

    Returns:
        Formatted string like "4 hrs 3 mins", "1 hr 0 mins" or "45 mins"
    """
    if seconds is None or not math.isfinite(seconds) or seconds < 0:
        return "-"

    total_minutes = int(round(seconds / 60.0))
    hours, minutes = divmod(total_minutes, 60)
    minute_text = f"{minutes} min" if minutes == 1 else f"{minutes} mins"
    if hours == 0:
        return minute_text
    hour_text = f"{hours} hr" if hours == 1 else f"{hours} hrs"
    return f"{hour_text} {minute_text}"


def format_vector(values, precision: int = 4) -> str:
    """Compact one-line rendering of a numeric vector."""
    return np.array2string(np.asarray(values, dtype=float), precision=precision, separator=', ',
                           suppress_small=True, max_line_width=10_000)
