import io
import os
import tempfile

import numpy as np
import pandas as pd
import streamlit as st

from utils.config import ExperimentConfig

# session keys shared by the pages
SCENE_KEY = "synthetic_scene"
DATASET_KEY = "dataset"
RUN_KEY = "training_run"
MODEL_KEY = "model"
METRICS_KEY = "metrics"
OUTPUT_DIR_KEY = "output_dir"
EXPERIMENT_KEY = "experiment_config"

DEFAULT_OUTPUT_DIR = os.path.join(tempfile.gettempdir(), "mambadepth_runs")


# Function to pack a stack of arrays into bytes for the session state
def arrays_to_bytes(arrays):
    if arrays is None:
        return None
    buffer = io.BytesIO()
    np.savez_compressed(buffer, *arrays)
    return buffer.getvalue()


# Function to unpack arrays stored with arrays_to_bytes
def bytes_to_arrays(blob):
    if blob is None:
        return None
    with np.load(io.BytesIO(blob)) as archive:
        return [archive[f"arr_{i}"] for i in range(len(archive.files))]


def get_data(key, default=None):
    return st.session_state.get(key, default)


def store_data(key, value):
    st.session_state[key] = value
    update_timestamp(key)


def store_frames(key, frames):
    """Store image arrays compressed; large float stacks bloat the session otherwise."""
    st.session_state[key + "_frames"] = arrays_to_bytes(frames)
    update_timestamp(key)


def get_frames(key, default=None):
    blob = st.session_state.get(key + "_frames")
    return bytes_to_arrays(blob) if blob is not None else default


def get_experiment():
    """Experiment settings edited on the Assumptions page (defaults until then)."""
    if EXPERIMENT_KEY not in st.session_state:
        st.session_state[EXPERIMENT_KEY] = ExperimentConfig()
    return st.session_state[EXPERIMENT_KEY]


def get_output_dir():
    """Directory used for checkpoints and the run registry."""
    out_dir = st.session_state.get(OUTPUT_DIR_KEY, DEFAULT_OUTPUT_DIR)
    os.makedirs(out_dir, exist_ok=True)
    return out_dir


def clear_all_data():
    for key in list(st.session_state.keys()):
        del st.session_state[key]


def update_timestamp(key):
    st.session_state[key + "_last_updated"] = pd.Timestamp.now().strftime("%Y-%m-%d %H:%M:%S")


def get_timestamp(key):
    return st.session_state.get(key + "_last_updated", None)
