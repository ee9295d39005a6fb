import logging
from typing import List, Optional

from database.db_manager import DatabaseManager
from utils.report_formatter import ReportFormatter

logger = logging.getLogger(__name__)


class ReportHandlers:
    def __init__(self, db: Optional[DatabaseManager] = None):
        self.db = db or DatabaseManager()
        self.formatter = ReportFormatter()
        self.db.init_db()

    def record_run(self, config_checksum: str, exit_code: int, wall_time: float, report_lines: List[str]) -> Optional[str]:
        return self.db.save_run(config_checksum, exit_code, wall_time, report_lines)

    def list_runs(self, limit: int = 20) -> str:
        """Table of stored runs."""
        return self.formatter.runs_table(self.db.get_runs(limit))

    def show_run(self, run_id: str) -> Optional[List[str]]:
        """Report lines of a stored run, exactly as they were written."""
        run = self.db.get_run(run_id)
        if run is None:
            logger.warning(f"No stored run {run_id}")
            return None
        return run['report_lines']
