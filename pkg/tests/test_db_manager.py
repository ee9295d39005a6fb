import sqlite3

import pytest

from database.db_manager import DatabaseManager
from frechet.errors import ModelChecksumError
from utils.config_loader import ModelSpec
from utils.operator_builder import build_model

TRIG = ModelSpec('t8', 'trig', {'M': 8, 'K': 3})


@pytest.fixture
def db(tmp_path):
    manager = DatabaseManager(str(tmp_path / 'store' / 'runs.db'))
    manager.init_db()
    return manager


class TestRuns:
    def test_save_and_read_back(self, db):
        run_id = db.save_run('c' * 64, 0, 1.25, ['{"a":1}', '{"b":2}'])
        run = db.get_run(run_id)
        assert run['report_lines'] == ['{"a":1}', '{"b":2}']
        assert run['task_count'] == 2
        assert run['exit_code'] == 0
        assert run['wall_time'] == 1.25

    def test_most_recent_first(self, db):
        first = db.save_run('a' * 64, 0, 0.1, [])
        second = db.save_run('b' * 64, 1, 0.2, ['{}'])
        assert [run['run_id'] for run in db.get_runs()] == [second, first]
        assert len(db.get_runs(limit=1)) == 1

    def test_unknown_run(self, db):
        assert db.get_run('nope') is None

    def test_path_from_environment(self, tmp_path, monkeypatch):
        monkeypatch.setenv('FRECHET_DB_PATH', str(tmp_path / 'env.db'))
        assert DatabaseManager().db_path == str(tmp_path / 'env.db')


class TestModels:
    def test_round_trip(self, db):
        model = build_model(TRIG)
        assert db.save_model(TRIG, model)
        loaded = db.load_model('t8')
        assert loaded.checksums() == model.checksums()
        assert loaded.dim == 17

    def test_missing_model(self, db):
        assert db.load_model('absent') is None

    def test_tampered_checksum(self, db):
        db.save_model(TRIG, build_model(TRIG))
        conn = sqlite3.connect(db.db_path)
        conn.execute("UPDATE models SET matrix_checksum = ? WHERE model_id = ?", ('0' * 64, 't8'))
        conn.commit()
        conn.close()
        with pytest.raises(ModelChecksumError):
            db.load_model('t8')
