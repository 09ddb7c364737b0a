"""CSV output with an audit header: traces, benchmark summaries, plot panels."""
import logging
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, Union

import pandas as pd

from config import TOOL_NAME, TOOL_VERSION

logger = logging.getLogger(__name__)

HEADER_PREFIX = '# '

# Plot panel name -> trace column
PANELS = {
    'soe': 'soe',
    'terminal_voltage': 'v_terminal',
    'current': 'i_applied',
    'core_temperature': 't_c_true',
}


def header_lines(config_hash: str, seed: Optional[int], extra: Optional[Dict[str, object]] = None) -> list:
    lines = [f"tool: {TOOL_NAME} {TOOL_VERSION}", f"config_hash: {config_hash}", f"seed: {seed}"]
    for key, value in (extra or {}).items():
        lines.append(f"{key}: {value}")
    return lines


def write_csv(frame: pd.DataFrame, path: Union[str, Path], header: Iterable[str]) -> Path:
    """Write ``frame`` after a block of '# ' comment lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        for line in header:
            handle.write(f"{HEADER_PREFIX}{line}\n")
        frame.to_csv(handle, index=False, float_format='%.10g', lineterminator='\n')
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def read_csv(path: Union[str, Path]) -> pd.DataFrame:
    """Read a file written by write_csv, skipping the header block."""
    return pd.read_csv(path, comment=HEADER_PREFIX.strip())


def read_header(path: Union[str, Path]) -> Dict[str, str]:
    values = {}
    with open(path, encoding='utf-8') as handle:
        for line in handle:
            if not line.startswith(HEADER_PREFIX):
                break
            key, _, value = line[len(HEADER_PREFIX):].rstrip('\n').partition(': ')
            values[key] = value
    return values


def safe_name(name: str) -> str:
    return ''.join(c if c.isalnum() or c in '-_' else '_' for c in name)


def write_trace(trace, out_dir: Union[str, Path], header: Sequence[str]) -> Path:
    path = Path(out_dir) / f"trace_{safe_name(trace.name)}.csv"
    extra = [f"method: {trace.name}", f"status: {trace.status}"]
    if trace.failure:
        extra.append(f"failure: {trace.failure}")
    return write_csv(trace.to_frame(), path, list(header) + extra)


def summary_frame(rows) -> pd.DataFrame:
    return pd.DataFrame([{
        'method': row.method,
        'discharge_time_s': row.discharge_time,
        'max_core_temp_c': row.max_core_temp,
        'constraint_satisfied': row.verdict,
        'status': row.status,
        'tube_violations': row.tube_violations,
    } for row in rows], columns=['method', 'discharge_time_s', 'max_core_temp_c',
                                 'constraint_satisfied', 'status', 'tube_violations'])


def write_panels(traces, out_dir: Union[str, Path], header: Sequence[str]) -> Dict[str, Path]:
    """Long-format (method, t_s, value) CSVs, one per plot panel."""
    written = {}
    for panel, column in PANELS.items():
        parts = []
        for trace in traces:
            frame = trace.to_frame()
            if frame.empty:
                continue
            parts.append(pd.DataFrame({'method': trace.name, 't_s': frame['t'], 'value': frame[column]}))
        panel_frame = pd.concat(parts, ignore_index=True) if parts else pd.DataFrame(
            columns=['method', 't_s', 'value'])
        written[panel] = write_csv(panel_frame, Path(out_dir) / f"panel_{panel}.csv",
                                   list(header) + [f"panel: {panel}"])
    return written
