import io
import os
import tempfile

import cv2
import numpy as np
import streamlit as st

from utils.data_storage import MODEL_KEY, SCENE_KEY, get_data, get_frames, get_output_dir, store_frames
from utils.file_formats import colorize_disparity, read_image, write_pfm
from utils.mambadepth_net import load_model, predict_disparity
from utils.run_registry import list_runs
from utils.visualization import create_disparity_figure, create_frame_strip

st.set_page_config(
    page_title="Inference - MambaDepth Desk",
    page_icon="🔭",
    layout="wide",
)

PREDICTION_KEY = "prediction"

st.title("🔭 Inference")

st.markdown("""
Predict a full-resolution disparity map from a single image. Image width
and height must both be divisible by 32.
""")

# Choose a checkpoint
runs = list_runs(get_output_dir())
options = ["Current session model"] if get_data(MODEL_KEY) is not None else []
options += [f"{row.run_id}: {row.checkpoint}" for row in runs.itertuples()]
options.append("Checkpoint path...")
choice = st.selectbox("Model", options)

model_entry = None
try:
    if choice == "Current session model":
        model_entry = get_data(MODEL_KEY)
    elif choice == "Checkpoint path...":
        path = st.text_input("Checkpoint file")
        if path:
            model_entry = load_model(path)
    else:
        model_entry = load_model(choice.split(": ", 1)[1])
except Exception as e:
    st.error(f"Error loading checkpoint: {str(e)}")

# Choose an image
source = st.radio("Image", ["Synthetic scene frame", "Upload"], horizontal=True)
image = None
if source == "Synthetic scene frame":
    scene = get_data(SCENE_KEY)
    if scene is None:
        st.info("No synthetic scene in this session")
    else:
        index = st.slider("Frame", min_value=0, max_value=len(scene) - 1, value=len(scene) // 2)
        image = scene.frames[index]
else:
    uploaded = st.file_uploader("Upload an image", type=["png", "jpg", "jpeg", "ppm", "pfm"])
    if uploaded is not None:
        suffix = os.path.splitext(uploaded.name)[1]
        with tempfile.NamedTemporaryFile(suffix=suffix, delete=False) as handle:
            handle.write(uploaded.getvalue())
        try:
            image = read_image(handle.name)
        except Exception as e:
            st.error(f"Error reading image: {str(e)}")
        finally:
            os.unlink(handle.name)

if model_entry is None or image is None:
    st.stop()

if st.button("Predict Disparity", use_container_width=True):
    model, net_config = model_entry
    with st.spinner("Running DepthNet..."):
        try:
            disp = predict_disparity(image, model.depth, net_config)
            store_frames(PREDICTION_KEY, [image, disp])
        except Exception as e:
            st.error(f"Error predicting disparity: {str(e)}")

stored = get_frames(PREDICTION_KEY)
if stored is not None:
    shown_image, disp = stored
    col1, col2 = st.columns(2)
    with col1:
        st.plotly_chart(create_frame_strip([shown_image], titles=["Input"]), use_container_width=True)
    with col2:
        st.plotly_chart(create_disparity_figure(disp), use_container_width=True)

    with tempfile.NamedTemporaryFile(suffix=".pfm", delete=False) as handle:
        pfm_path = handle.name
    write_pfm(pfm_path, disp.astype(np.float32))
    with open(pfm_path, "rb") as handle:
        pfm_bytes = handle.read()
    os.unlink(pfm_path)
    ok, png = cv2.imencode(".png", colorize_disparity(disp))

    col1, col2 = st.columns(2)
    with col1:
        st.download_button("Download Disparity (PFM)", data=pfm_bytes, file_name="disparity.pfm",
                           mime="application/octet-stream")
    with col2:
        if ok:
            st.download_button("Download Preview (PNG)", data=io.BytesIO(png.tobytes()),
                               file_name="disparity.png", mime="image/png")
    st.caption(f"Disparity range {disp.min():.4f} to {disp.max():.4f}")
