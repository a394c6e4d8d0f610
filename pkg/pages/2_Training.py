from dataclasses import replace

import streamlit as st

from utils.data_processor import load_dataset_dir, loss_curve_frame
from utils.data_storage import (
    DATASET_KEY, MODEL_KEY, RUN_KEY, get_data, get_experiment, get_output_dir, store_data,
)
from utils.run_registry import list_runs
from utils.trainer import run_training
from utils.visualization import create_loss_chart

st.set_page_config(
    page_title="Training - MambaDepth Desk",
    page_icon="🏋️",
    layout="wide",
)

st.title("🏋️ Training")

st.markdown("""
Both networks are trained jointly: DepthNet predicts disparity for the
middle frame, PoseNet predicts the motion to each neighbour, and the loss
compares the warped neighbours with the middle frame. Settings come from
the **Assumptions** page.
""")

experiment = get_experiment()
dataset = get_data(DATASET_KEY)

with st.expander("Training data", expanded=dataset is None):
    dataset_dir = st.text_input("Frame directory (frames/, intrinsics.txt, optional depth/)", value="")
    if st.button("Load Directory") and dataset_dir:
        try:
            dataset = load_dataset_dir(dataset_dir)
            store_data(DATASET_KEY, dataset)
            st.success(f"Loaded {len(dataset)} triplets from {dataset_dir}")
        except Exception as e:
            st.error(f"Error loading dataset: {str(e)}")

if not dataset:
    st.warning("No training data. Generate a scene on the Synthetic Scene page or load a directory.")
    st.stop()

col1, col2, col3 = st.columns(3)
with col1:
    epochs = st.number_input("Epochs", min_value=0, max_value=200, value=experiment.train.epochs)
with col2:
    seed = st.number_input("Seed", min_value=0, value=experiment.train.seed)
with col3:
    run_id = st.text_input("Run name", value=f"seed{experiment.train.seed}")

st.caption(f"{len(dataset)} triplets, batch size {experiment.train.batch_size}, "
           f"base channels {experiment.model.base_channels}, output directory {get_output_dir()}")

if st.button("Start Training", use_container_width=True):
    config = replace(experiment, train=replace(experiment.train, epochs=int(epochs), seed=int(seed)))
    progress = st.progress(0.0)
    status = st.empty()
    rows = []

    def on_epoch(epoch, means):
        rows.append(means)
        progress.progress((epoch + 1) / max(1, config.train.epochs))
        status.info(f"Epoch {epoch}: loss {means['loss_total']:.5f}, "
                    f"mask coverage {means['mask_coverage']:.2f}")

    with st.spinner("Training..."):
        try:
            out_dir = get_output_dir()
            model, result = run_training(config, out_dir, dataset, on_epoch=on_epoch, run_id=run_id or None)
            store_data(RUN_KEY, result)
            store_data(MODEL_KEY, (model, config.model))
            st.success(f"Training finished. Checkpoint: {result.checkpoint}")
        except Exception as e:
            st.error(f"Error during training: {str(e)}")

run = get_data(RUN_KEY)
if run is not None:
    st.header("Loss Curve")
    st.plotly_chart(create_loss_chart(run.curve), use_container_width=True)
    st.dataframe(run.epoch_losses, use_container_width=True)
    st.download_button(
        label="Download Loss Curve",
        data=loss_curve_frame(run.curve.to_dict("records")).to_csv(index=False),
        file_name="loss_curve.csv",
        mime="text/csv",
    )

st.header("Registered Runs")
runs = list_runs(get_output_dir())
if runs.empty:
    st.info("No runs registered yet")
else:
    st.dataframe(runs, use_container_width=True)
