import json
import logging
import os
import sqlite3
import uuid
from typing import Dict, List, Optional

from frechet.errors import ModelChecksumError
from frechet.witnesses import ModelSpace
from utils.config_loader import ModelSpec
from utils.operator_builder import build_model

logger = logging.getLogger(__name__)


class DatabaseManager:
    def __init__(self, db_path: Optional[str] = None):
        self.db_path = db_path or os.getenv('FRECHET_DB_PATH', 'data/frechet_runs.db')
        directory = os.path.dirname(self.db_path)
        if directory:
            os.makedirs(directory, exist_ok=True)

    def get_connection(self):
        """Get database connection."""
        return sqlite3.connect(self.db_path)

    def init_db(self):
        """Initialize database tables."""
        conn = self.get_connection()
        cursor = conn.cursor()

        try:
            cursor.execute('''
                CREATE TABLE IF NOT EXISTS runs (
                    run_id TEXT PRIMARY KEY,
                    config_checksum TEXT NOT NULL,
                    exit_code INTEGER NOT NULL,
                    wall_time REAL,
                    report_lines TEXT,
                    created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
                )
            ''')

            cursor.execute('''
                CREATE TABLE IF NOT EXISTS models (
                    model_id TEXT PRIMARY KEY,
                    spec TEXT NOT NULL,
                    grid_checksum TEXT,
                    matrix_checksum TEXT,
                    created_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
                )
            ''')

            conn.commit()
            logger.info("Database initialized successfully")

        except Exception as e:
            logger.error(f"Error initializing database: {e}")
            conn.rollback()
        finally:
            conn.close()

    def save_run(self, config_checksum: str, exit_code: int, wall_time: float, report_lines: List[str]) -> Optional[str]:
        """Store a finished run and return its id."""
        run_id = uuid.uuid4().hex[:12]
        conn = self.get_connection()
        cursor = conn.cursor()

        try:
            cursor.execute('''
                INSERT INTO runs (run_id, config_checksum, exit_code, wall_time, report_lines)
                VALUES (?, ?, ?, ?, ?)
            ''', (run_id, config_checksum, exit_code, wall_time, json.dumps(report_lines)))

            conn.commit()
            logger.info(f"Run {run_id} stored with exit code {exit_code}")
            return run_id

        except Exception as e:
            logger.error(f"Error storing run: {e}")
            conn.rollback()
            return None
        finally:
            conn.close()

    def get_runs(self, limit: int = 20) -> List[Dict]:
        """Most recent runs first."""
        conn = self.get_connection()
        cursor = conn.cursor()

        try:
            cursor.execute('''
                SELECT run_id, config_checksum, exit_code, wall_time, report_lines, created_at
                FROM runs ORDER BY created_at DESC, rowid DESC LIMIT ?
            ''', (limit,))
            return [self._run_row(row) for row in cursor.fetchall()]

        except Exception as e:
            logger.error(f"Error getting runs: {e}")
            return []
        finally:
            conn.close()

    def get_run(self, run_id: str) -> Optional[Dict]:
        conn = self.get_connection()
        cursor = conn.cursor()

        try:
            cursor.execute('''
                SELECT run_id, config_checksum, exit_code, wall_time, report_lines, created_at
                FROM runs WHERE run_id = ?
            ''', (run_id,))
            row = cursor.fetchone()
            return self._run_row(row) if row else None

        except Exception as e:
            logger.error(f"Error getting run {run_id}: {e}")
            return None
        finally:
            conn.close()

    def _run_row(self, row) -> Dict:
        lines = json.loads(row[4]) if row[4] else []
        return {
            'run_id': row[0],
            'config_checksum': row[1],
            'exit_code': row[2],
            'wall_time': row[3] or 0.0,
            'report_lines': lines,
            'task_count': len(lines),
            'created_at': row[5],
        }

    def save_model(self, spec: ModelSpec, model: ModelSpace) -> bool:
        """Store a model definition with the checksums of its grid and matrices."""
        checksums = model.checksums()
        definition = {'id': spec.id, 'kind': spec.kind}
        definition.update(spec.params)
        conn = self.get_connection()
        cursor = conn.cursor()

        try:
            cursor.execute('''
                INSERT OR REPLACE INTO models (model_id, spec, grid_checksum, matrix_checksum)
                VALUES (?, ?, ?, ?)
            ''', (spec.id, json.dumps(definition, sort_keys=True), checksums['grid'], checksums['matrices']))

            conn.commit()
            logger.info(f"Model {spec.id} stored (matrices {checksums['matrices'][:12]})")
            return True

        except Exception as e:
            logger.error(f"Error storing model {spec.id}: {e}")
            conn.rollback()
            return False
        finally:
            conn.close()

    def load_model(self, model_id: str) -> Optional[ModelSpace]:
        """Rebuild a stored model from its definition and verify the checksums."""
        conn = self.get_connection()
        cursor = conn.cursor()

        try:
            cursor.execute('''
                SELECT spec, grid_checksum, matrix_checksum FROM models WHERE model_id = ?
            ''', (model_id,))
            row = cursor.fetchone()
        except Exception as e:
            logger.error(f"Error loading model {model_id}: {e}")
            return None
        finally:
            conn.close()

        if not row:
            return None
        definition = json.loads(row[0])
        spec = ModelSpec(definition.pop('id'), definition.pop('kind'), definition)
        model = build_model(spec)
        checksums = model.checksums()
        if checksums['grid'] != row[1]:
            raise ModelChecksumError(model_id, 'grid')
        if checksums['matrices'] != row[2]:
            raise ModelChecksumError(model_id, 'matrix')
        return model
