import csv
import io
import json
import math
import os
from typing import Any, List, Sequence

import numpy as np

REPORT_SCHEMA = 1
LADDER_COLUMNS = ('N', 'K_n', 'fit')


def to_plain(value: Any) -> Any:
    """JSON-safe copy: numpy to builtins, non-finite floats as strings."""
    if isinstance(value, dict):
        return {str(key): to_plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(item) for item in value]
    if isinstance(value, np.ndarray):
        return to_plain(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return 'nan'
        if math.isinf(value):
            return 'inf' if value > 0 else '-inf'
        return value
    return value


class ReportFormatter:
    def __init__(self):
        self.emojis = {
            'ok': '✅',
            'expected_negative': '☑️',
            'unexpected': '⚠️',
            'failed': '❌',
            'run': '🧮',
        }

    def json_line(self, result) -> str:
        record = {'schema': REPORT_SCHEMA}
        record.update(result.to_dict())
        return json.dumps(to_plain(record), sort_keys=True, allow_nan=False)

    def json_lines(self, results: Sequence) -> List[str]:
        return [self.json_line(result) for result in results]

    def ladder_csv(self, result) -> str:
        """CSV table N, K_n, fit for a task carrying a ladder."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator='\n')
        writer.writerow(LADDER_COLUMNS)
        for N, K, fit in result.ladder:
            writer.writerow([N, repr(float(K)), repr(float(fit))])
        return buffer.getvalue()

    def write(self, results: Sequence, out_dir: str, report_format: str = 'json') -> List[str]:
        """Write report files and return their paths; IO errors carry the path."""
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        report_path = os.path.join(out_dir, 'report.jsonl')
        try:
            with open(report_path, 'w', encoding='utf-8', newline='\n') as f:
                for line in self.json_lines(results):
                    f.write(line + '\n')
            paths.append(report_path)
            if report_format == 'csv':
                for result in results:
                    if not result.ladder:
                        continue
                    path = os.path.join(out_dir, f"{result.task_id}.csv")
                    with open(path, 'w', encoding='utf-8', newline='') as f:
                        f.write(self.ladder_csv(result))
                    paths.append(path)
        except OSError as e:
            raise OSError(f"Cannot write report to {e.filename or out_dir}: {e.strerror or e}") from e
        return paths

    def summary(self, results: Sequence, exit_code: int, wall_time: float) -> str:
        """Console summary of a run."""
        lines = [f"{self.emojis['run']} Run finished with exit code {exit_code} in {wall_time:.2f}s"]
        for result in results:
            mark = self.emojis.get(result.status, '•')
            detail = f" - {result.error}" if result.error else ''
            lines.append(f"  {mark} {result.task_id} ({result.task_type}): {result.status}{detail}")
        if not results:
            lines.append("  (no tasks)")
        return "\n".join(lines)

    def runs_table(self, runs: Sequence[dict]) -> str:
        if not runs:
            return "No stored runs."
        lines = ["📋 Stored runs:"]
        for run in runs:
            lines.append(
                f"  {run['run_id']}  exit={run['exit_code']}  tasks={run['task_count']}  "
                f"time={run['wall_time']:.2f}s  config={run['config_checksum'][:12]}  at {run['created_at']}"
            )
        return "\n".join(lines)
