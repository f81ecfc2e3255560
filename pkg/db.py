"""
db.py - SQLite run registry for the satsolar pipeline

Every `run` leaves one row in the `runs` table: what was run, where the
outputs went, how it ended and the headline numbers. The `history`
subcommand reads it back.
"""

import os
import sqlite3
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from utils.constants import DEFAULT_DB_PATH


# ===================================================================
# DATABASE CONNECTION
# ===================================================================

def get_db_path() -> str:
    """Allow override via env var, else use default path."""
    return os.getenv("SATSOLAR_DB_PATH", DEFAULT_DB_PATH)


def get_connection() -> sqlite3.Connection:
    """Create a new SQLite connection with Row factory."""
    db_path = Path(get_db_path())
    db_path.parent.mkdir(parents=True, exist_ok=True)
    conn = sqlite3.connect(db_path)
    conn.row_factory = sqlite3.Row
    return conn


# ===================================================================
# DATABASE INITIALIZATION
# ===================================================================

def init_db() -> None:
    """Initialize DB schema (idempotent)."""
    conn = get_connection()
    cur = conn.cursor()

    cur.execute(
        """
        CREATE TABLE IF NOT EXISTS runs (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            run_id TEXT UNIQUE NOT NULL,
            config_path TEXT,
            output_dir TEXT NOT NULL,
            status TEXT NOT NULL,
            failed_stage TEXT,
            wall_time_s REAL,
            building_count INTEGER,
            segment_count INTEGER,
            panel_count INTEGER,
            total_energy_kwh REAL,
            building_mae_m REAL,
            segment_iou REAL,
            manifest_path TEXT,
            created_at TEXT NOT NULL
        )
        """
    )

    cur.execute("CREATE INDEX IF NOT EXISTS idx_run_id ON runs(run_id)")
    cur.execute("CREATE INDEX IF NOT EXISTS idx_run_status ON runs(status)")

    conn.commit()
    conn.close()


# ===================================================================
# RUNS
# ===================================================================

def save_run(
    *,
    run_id: str,
    config_path: Optional[str],
    output_dir: str,
    status: str,
    failed_stage: Optional[str] = None,
    wall_time_s: Optional[float] = None,
    building_count: Optional[int] = None,
    segment_count: Optional[int] = None,
    panel_count: Optional[int] = None,
    total_energy_kwh: Optional[float] = None,
    building_mae_m: Optional[float] = None,
    segment_iou: Optional[float] = None,
    manifest_path: Optional[str] = None,
) -> Optional[int]:
    """
    Insert (or replace) one run record.

    Returns:
        row id of the stored record
    """
    conn = get_connection()
    cur = conn.cursor()

    created_at = datetime.utcnow().isoformat(timespec="seconds")

    cur.execute(
        """
        INSERT OR REPLACE INTO runs (
            run_id, config_path, output_dir, status, failed_stage,
            wall_time_s, building_count, segment_count, panel_count,
            total_energy_kwh, building_mae_m, segment_iou,
            manifest_path, created_at
        )
        VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)
        """,
        (
            run_id,
            config_path,
            output_dir,
            status,
            failed_stage,
            wall_time_s,
            building_count,
            segment_count,
            panel_count,
            total_energy_kwh,
            building_mae_m,
            segment_iou,
            manifest_path,
            created_at,
        ),
    )

    row_id = cur.lastrowid
    conn.commit()
    conn.close()

    return row_id


def get_run(run_id: str) -> Optional[Dict[str, Any]]:
    """
    Retrieve a run by ID.

    Returns:
        Run dict or None if not found
    """
    conn = get_connection()
    cur = conn.cursor()

    cur.execute("SELECT * FROM runs WHERE run_id = ?", (run_id,))
    row = cur.fetchone()
    conn.close()

    if row:
        return dict(row)
    return None


def fetch_latest_runs(limit: int = 20) -> pd.DataFrame:
    """Return the latest N runs, newest first."""
    conn = get_connection()

    query = """
    SELECT run_id, status, failed_stage, wall_time_s,
        building_count, segment_count, panel_count, total_energy_kwh,
        building_mae_m, segment_iou, output_dir, created_at
    FROM runs
    ORDER BY created_at DESC, id DESC
    LIMIT ?
    """

    df = pd.read_sql_query(query, conn, params=(limit,))
    conn.close()

    return df


def get_run_statistics() -> Dict[str, Any]:
    """Counts by status and the mean wall time of successful runs."""
    conn = get_connection()
    cur = conn.cursor()

    cur.execute("SELECT COUNT(*) AS c FROM runs")
    total_runs = cur.fetchone()["c"]

    cur.execute("SELECT status, COUNT(*) AS c FROM runs GROUP BY status")
    by_status: List[sqlite3.Row] = cur.fetchall()

    cur.execute("SELECT ROUND(AVG(wall_time_s), 2) AS t FROM runs WHERE status = 'succeeded'")
    avg_wall_time = cur.fetchone()["t"]

    conn.close()

    return {
        "total_runs": total_runs,
        "by_status": {row["status"]: row["c"] for row in by_status},
        "avg_wall_time_s": avg_wall_time,
    }
