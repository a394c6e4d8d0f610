import streamlit as st

from utils.data_storage import (
    DATASET_KEY, METRICS_KEY, MODEL_KEY, RUN_KEY, SCENE_KEY,
    clear_all_data, get_data, get_output_dir, get_timestamp,
)
from utils.run_registry import list_runs

# Set page configuration
st.set_page_config(
    page_title="MambaDepth Desk",
    page_icon="🌄",
    layout="wide",
)


def main():
    st.title("MambaDepth Desk")

    st.markdown("""
    ## Self-supervised monocular depth on a desktop CPU

    A depth network built from state-space blocks learns to predict
    per-pixel depth from single images, trained only on consecutive video
    frames: a pose network guesses the camera motion, the predicted depth
    warps the neighbouring frames onto the middle one, and the photometric
    difference is the training signal.

    ### How to use:

    1. **Synthetic Scene** - Render a textured rigid scene with exact depth and poses
    2. **Training** - Train DepthNet and PoseNet on the scene (or a frame directory)
    3. **Inference** - Predict disparity for one image from a saved checkpoint
    4. **Evaluation** - Compare predicted depth with ground truth using the standard metrics
    5. **Assumptions** - Review the hyperparameters and conventions

    ### Pipeline Status:
    """)

    col1, col2 = st.columns(2)

    with col1:
        scene = get_data(SCENE_KEY)
        if scene is not None:
            st.success(f"✅ Synthetic scene: {len(scene)} frames ({get_timestamp(SCENE_KEY)})")
        else:
            st.warning("❌ No scene generated. Go to the Synthetic Scene page.")

        dataset = get_data(DATASET_KEY)
        if dataset:
            st.success(f"✅ Training data: {len(dataset)} frame triplets")
        else:
            st.info("ℹ️ No training data prepared")

    with col2:
        run = get_data(RUN_KEY)
        if run is not None:
            st.success(f"✅ Last training run: {len(run.epoch_losses)} epochs, checkpoint {run.checkpoint}")
        else:
            st.info("ℹ️ No training run in this session")

        if get_data(MODEL_KEY) is not None:
            st.success("✅ Model loaded for inference")
        if get_data(METRICS_KEY) is not None:
            st.success(f"✅ Evaluation: {len(get_data(METRICS_KEY))} images scored")

    st.header("Registered Runs")
    try:
        runs = list_runs(get_output_dir())
        if runs.empty:
            st.info("No runs registered yet in " + get_output_dir())
        else:
            st.dataframe(runs, use_container_width=True)
    except Exception as e:
        st.error(f"Error reading the run registry: {str(e)}")

    st.header("Reset Data")
    if st.button("Clear All Data", use_container_width=True):
        clear_all_data()
        st.success("All data has been cleared")
        st.rerun()


if __name__ == "__main__":
    main()
