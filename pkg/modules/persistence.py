"""
Persistence Module
Record pipeline runs in the SQLite run registry and read them back.

Features:
- Generate unique Run IDs
- Save run summaries (status, counts, energy, headline metrics)
- Retrieve run history
- Registry totals by status
"""

import hashlib
import logging
from datetime import datetime
from typing import Optional

import pandas as pd

logger = logging.getLogger(__name__)


# ===================================================================
# RUN ID GENERATION
# ===================================================================

def generate_run_id(config_path: Optional[str] = None) -> str:
    """
    Generate a unique Run ID.

    Format: RUN_YYYYMMDD_XXXXXX
    where XXXXXX is a 6-char hash of timestamp + config path

    Args:
        config_path: Optional path of the config being run

    Returns:
        Unique run ID string
    """
    now = datetime.now()
    date_str = now.strftime("%Y%m%d")

    seed = f"{now.isoformat()}{config_path or 'inline'}"
    hash_suffix = hashlib.md5(seed.encode()).hexdigest()[:6].upper()

    return f"RUN_{date_str}_{hash_suffix}"


# ===================================================================
# RUN PERSISTENCE (Database Operations)
# ===================================================================

def save_run(manifest) -> bool:
    """
    Save a run summary to the database.

    Args:
        manifest: RunManifest of a finished (or failed) run

    Returns:
        True if the record was written
    """
    try:
        import db

        db.init_db()
        summary = manifest.summary
        metrics = manifest.metrics or {}
        db.save_run(
            run_id=manifest.run_id,
            config_path=manifest.config_path,
            output_dir=manifest.output_dir,
            status=manifest.status,
            failed_stage=manifest.failed_stage,
            wall_time_s=manifest.wall_time_s,
            building_count=summary.get("building_count"),
            segment_count=summary.get("segment_count"),
            panel_count=summary.get("panel_count"),
            total_energy_kwh=summary.get("total_energy_kwh"),
            building_mae_m=metrics.get("building_mae_m"),
            segment_iou=metrics.get("segment_iou_fraction"),
            manifest_path=manifest.outputs.get("manifest"),
        )
        logger.info(f"Run saved: {manifest.run_id} ({manifest.status})")
        return True

    except Exception as e:
        logger.error(f"Error saving run {manifest.run_id}: {e}")
        return False


def retrieve_run(run_id: str) -> dict:
    """
    Retrieve a saved run by ID.

    Returns:
        Run data dict or empty dict if not found
    """
    try:
        import db
        db.init_db()
        run = db.get_run(run_id)
        return run if run is not None else {}

    except Exception as e:
        logger.error(f"Error retrieving run {run_id}: {e}")
        return {}


def list_runs(limit: int = 20) -> pd.DataFrame:
    """
    Latest runs, newest first.

    Returns:
        DataFrame of run summaries (empty on error)
    """
    try:
        import db
        db.init_db()
        return db.fetch_latest_runs(limit)

    except Exception as e:
        logger.error(f"Error listing runs: {e}")
        return pd.DataFrame()


def run_statistics() -> dict:
    """
    Registry totals: run count, counts by status, mean successful wall time.

    Returns:
        dict from db.get_run_statistics (empty on error)
    """
    try:
        import db
        db.init_db()
        return db.get_run_statistics()

    except Exception as e:
        logger.error(f"Error reading run statistics: {e}")
        return {}
