import hashlib
import json
import logging
import sqlite3
from pathlib import Path
from typing import Any, Optional, Tuple

logger = logging.getLogger(__name__)


def fmt17(x: float) -> str:
    """Full-precision decimal string."""
    return format(float(x), ".17g")


def digest(payload: Any) -> str:
    """SHA-256 of the canonical JSON form of payload."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class MomentCache:
    """sqlite3-backed store of individually computed A, B_i and C_ij entries.

    A cache that cannot be opened behaves as an empty one.
    """

    def __init__(self, cache_dir: str):
        self.db_file = str(Path(cache_dir) / "moments.db")
        self.connection = None
        try:
            Path(cache_dir).mkdir(parents=True, exist_ok=True)
            self.connection = sqlite3.connect(self.db_file)
            self.connection.execute(
                """
                CREATE TABLE IF NOT EXISTS entries (
                    key TEXT PRIMARY KEY,
                    value TEXT NOT NULL,
                    abs_err TEXT NOT NULL,
                    n_eval INTEGER NOT NULL
                );
                """
            )
            self.connection.commit()
        except (sqlite3.Error, OSError) as e:
            logger.warning("moment cache unavailable (%s): %s", self.db_file, e)
            self.connection = None

    def __del__(self):
        self.close()

    def close(self):
        if self.connection:
            self.connection.close()
            self.connection = None

    def get(self, key: str) -> Optional[Tuple[float, float, int]]:
        if not self.connection:
            return None

        sql = "SELECT value, abs_err, n_eval FROM entries WHERE key = ?;"

        try:
            cursor = self.connection.cursor()
            cursor.execute(sql, (key,))
            row = cursor.fetchone()
        except sqlite3.Error as e:
            logger.warning("error while reading cache entry %s: %s", key[:12], e)
            return None

        if row is None:
            return None
        return float(row[0]), float(row[1]), int(row[2])

    def put(self, key: str, value: float, abs_err: float, n_eval: int):
        if not self.connection:
            return

        sql = "INSERT OR REPLACE INTO entries (key, value, abs_err, n_eval) VALUES (?, ?, ?, ?);"

        try:
            self.connection.execute(sql, (key, fmt17(value), fmt17(abs_err), int(n_eval)))
            self.connection.commit()
        except sqlite3.Error as e:
            logger.warning("error while writing cache entry %s: %s", key[:12], e)

    def count(self) -> int:
        if not self.connection:
            return 0
        try:
            return int(self.connection.execute("SELECT COUNT(*) FROM entries;").fetchone()[0])
        except sqlite3.Error as e:
            logger.warning("error while counting cache entries: %s", e)
            return 0
