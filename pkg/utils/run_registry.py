import logging
import os

import pandas as pd
from pickledb import PickleDB

logger = logging.getLogger(__name__)

REGISTRY_FILE = "runs.db"


# Function to open (or create) the registry stored in an output directory
def open_registry(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    return PickleDB(os.path.join(out_dir, REGISTRY_FILE))


def register_run(out_dir, run_id, config, outputs, final_losses):
    """
    Record a finished training run.

    Parameters:
    out_dir (str): Directory holding the run outputs and the registry file
    run_id (str): Key for this run
    config (dict): Flattened experiment config (ExperimentConfig.to_dict())
    outputs (dict): Artifact name to path
    final_losses (dict): Last-epoch mean losses

    Returns:
    dict: The stored entry
    """
    entry = {
        "run_id": run_id,
        "created": pd.Timestamp.now().strftime("%Y-%m-%d %H:%M:%S"),
        "config": config,
        "outputs": outputs,
        "final_losses": final_losses,
    }
    db = open_registry(out_dir)
    db.set(run_id, entry)
    db.save()
    logger.info("Registered run %s in %s", run_id, os.path.join(out_dir, REGISTRY_FILE))
    return entry


def get_run(out_dir, run_id):
    return open_registry(out_dir).get(run_id)


def list_runs(out_dir):
    """All registered runs as a table (empty when no registry exists)."""
    if not os.path.exists(os.path.join(out_dir, REGISTRY_FILE)):
        return pd.DataFrame(columns=["run_id", "created", "checkpoint", "loss_total"])
    db = open_registry(out_dir)
    rows = []
    for key in db.all():
        entry = db.get(key)
        rows.append({
            "run_id": entry["run_id"],
            "created": entry["created"],
            "checkpoint": entry["outputs"].get("checkpoint"),
            "loss_total": entry["final_losses"].get("loss_total"),
        })
    return pd.DataFrame(rows, columns=["run_id", "created", "checkpoint", "loss_total"])
