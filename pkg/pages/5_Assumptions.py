from dataclasses import fields

import pandas as pd
import streamlit as st

from utils.config import SECTIONS, ExperimentConfig, parse_config_text
from utils.data_storage import EXPERIMENT_KEY, get_experiment, store_data
from utils.errors import ConfigError
from utils.mambadepth_net import parameter_breakdown
from utils.visualization import create_parameter_chart

st.set_page_config(
    page_title="Assumptions - MambaDepth Desk",
    page_icon="📋",
    layout="wide",
)


def _format(value):
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return "" if value is None else str(value)


def section_frame(experiment, section):
    obj = getattr(experiment, section)
    return pd.DataFrame({
        "key": [f.name for f in fields(obj)],
        "value": [_format(getattr(obj, f.name)) for f in fields(obj)],
    })


def frames_to_text(frames):
    """Render the edited tables in the config file format."""
    lines = []
    for section, frame in frames.items():
        lines.append(f"[{section}]")
        for row in frame.itertuples():
            if str(row.value).strip() != "":
                lines.append(f"{row.key} = {row.value}")
        lines.append("")
    return "\n".join(lines)


st.title("📋 Assumptions")

st.markdown("""
This page lists the settings used by the Training, Inference and
Evaluation pages. The defaults are the published hyperparameters
(photometric weight α = 0.85, smoothness weight λ = 1e-3, Adam β = (0.9, 0.999),
learning rate 1e-4 dropping to 1e-5 at epoch 15) with a network small
enough to train on one CPU core.

You can modify these values for your own runs.
""")

experiment = get_experiment()
edited = {}
for section in SECTIONS:
    with st.expander(f"[{section}]", expanded=section in ("model", "train")):
        edited[section] = st.data_editor(
            section_frame(experiment, section),
            disabled=["key"],
            hide_index=True,
            use_container_width=True,
            key=f"editor_{section}",
        )

col1, col2 = st.columns(2)
with col1:
    if st.button("Apply Changes", use_container_width=True):
        text = frames_to_text(edited)
        try:
            store_data(EXPERIMENT_KEY, parse_config_text(text))
            st.success("Settings updated")
        except ConfigError as e:
            st.error(f"Invalid setting: {str(e)}")
with col2:
    if st.button("Restore Defaults", use_container_width=True):
        store_data(EXPERIMENT_KEY, ExperimentConfig())
        st.rerun()

st.download_button(
    label="Download as Config File",
    data=frames_to_text({s: section_frame(experiment, s) for s in SECTIONS}),
    file_name="experiment.cfg",
    mime="text/plain",
)

st.header("📐 Network Size")
try:
    breakdown = parameter_breakdown(experiment.model)
    table = pd.DataFrame({"part": list(breakdown), "parameters": list(breakdown.values())})
    col1, col2 = st.columns([1, 1])
    with col1:
        st.dataframe(table, hide_index=True, use_container_width=True)
        st.metric("Trainable parameters", f"{table['parameters'].sum():,}")
    with col2:
        st.plotly_chart(create_parameter_chart(table), use_container_width=True)
except Exception as e:
    st.error(f"Error counting parameters: {str(e)}")

st.header("📚 Conventions")

with st.expander("Geometry", expanded=True):
    st.markdown("""
    - Pinhole camera, pixel centres at integer coordinates, origin top-left.
    - Pose matrices map points from the target camera into the source camera.
    - Warped pixels that land outside the source image are excluded from the loss.
    """)

with st.expander("Loss", expanded=True):
    st.markdown("""
    - Photometric error mixes SSIM (3×3 window) and L1: α/2·(1 − SSIM) + (1 − α)·|a − b|.
    - Per pixel the smaller error of the two source frames is kept.
    - The auto-mask drops pixels where the un-warped source already matches better
      (static scenes, objects moving with the camera).
    - Edge-aware smoothness on mean-normalised disparity, weighted λ / 2^scale.
    """)

with st.expander("Evaluation", expanded=True):
    st.markdown("""
    - Predictions are median-scaled per image and clamped to the preset depth range.
    - `kitti`: 1e-3 to 80 m, optional Garg crop. `make3d`: up to 70 m on a 2:1 centre crop.
    """)
