import io

import pandas as pd
import streamlit as st

from utils.data_processor import METRIC_COLUMNS, metrics_row_frame
from utils.data_storage import METRICS_KEY, MODEL_KEY, SCENE_KEY, get_data, store_data
from utils.mambadepth_net import disp_to_depth, predict_disparity
from utils.metrics_eval import PRESETS, evaluate_dirs, evaluate_pair
from utils import tensor_core as tc
from utils.visualization import create_metrics_chart

st.set_page_config(
    page_title="Evaluation - MambaDepth Desk",
    page_icon="📏",
    layout="wide",
)

st.title("📏 Evaluation")

st.markdown("""
Predicted depth is compared with ground truth using the standard error
metrics (Abs Rel, Sq Rel, RMSE, RMSE log) and accuracy thresholds
(δ < 1.25, 1.25², 1.25³). Monocular predictions have no absolute scale,
so each prediction is rescaled by the ratio of medians unless disabled.
""")

col1, col2, col3 = st.columns(3)
with col1:
    preset = st.selectbox("Preset", sorted(PRESETS))
with col2:
    garg_crop = st.checkbox("Garg crop", help="KITTI Eigen-split crop window")
with col3:
    median_scaling = st.checkbox("Median scaling", value=True)

mode = st.radio("Predictions", ["Session model on synthetic scene", "Directories"], horizontal=True)

if mode == "Directories":
    pred_dir = st.text_input("Prediction directory (*.pfm or *.npy)")
    gt_dir = st.text_input("Ground-truth directory (*.pfm or *.npy)")
    if st.button("Evaluate", use_container_width=True) and pred_dir and gt_dir:
        with st.spinner("Evaluating..."):
            try:
                reports, names = evaluate_dirs(pred_dir, gt_dir, preset=preset, garg_crop=garg_crop,
                                               median_scaling=median_scaling)
                store_data(METRICS_KEY, metrics_row_frame(reports, names))
            except Exception as e:
                st.error(f"Error evaluating: {str(e)}")
else:
    scene = get_data(SCENE_KEY)
    model_entry = get_data(MODEL_KEY)
    if scene is None or model_entry is None:
        st.info("Generate a scene and train (or load) a model first.")
    elif st.button("Evaluate", use_container_width=True):
        model, net_config = model_entry
        with st.spinner("Predicting and scoring every frame..."):
            try:
                reports = []
                for frame, gt in zip(scene.frames, scene.depths):
                    disp = predict_disparity(frame, model.depth, net_config)
                    with tc.no_grad():
                        depth = disp_to_depth(tc.Tensor(disp), net_config.min_depth,
                                              net_config.max_depth).numpy()
                    reports.append(evaluate_pair(depth, gt, preset, garg_crop=garg_crop,
                                                 median_scaling=median_scaling))
                names = [f"frame_{k:05d}" for k in range(len(reports))]
                store_data(METRICS_KEY, metrics_row_frame(reports, names))
            except Exception as e:
                st.error(f"Error evaluating: {str(e)}")

metrics = get_data(METRICS_KEY)
if metrics is None or metrics.empty:
    st.stop()

reported = [c for c in PRESETS[preset].reported if c in METRIC_COLUMNS]
st.header("Results")
st.plotly_chart(create_metrics_chart(metrics[["image"] + reported]), use_container_width=True)

mean_row = metrics[METRIC_COLUMNS].mean().to_frame().T
mean_row.insert(0, "image", "mean")
st.dataframe(pd.concat([metrics, mean_row], ignore_index=True).round(4), use_container_width=True)

# Excel export: per-image sheet plus a summary sheet
output = io.BytesIO()
with pd.ExcelWriter(output, engine="xlsxwriter") as writer:
    metrics.to_excel(writer, sheet_name="Per Image", index=False)
    mean_row[["image"] + reported].to_excel(writer, sheet_name="Summary", index=False)
    settings = pd.DataFrame({"setting": ["preset", "garg_crop", "median_scaling"],
                             "value": [preset, garg_crop, median_scaling]})
    settings.to_excel(writer, sheet_name="Settings", index=False)

col1, col2 = st.columns(2)
with col1:
    st.download_button(
        label="Download Excel Report",
        data=output.getvalue(),
        file_name="depth_evaluation.xlsx",
        mime="application/vnd.openxmlformats-officedocument.spreadsheetml.sheet",
    )
with col2:
    st.download_button(
        label="Download CSV",
        data=metrics.to_csv(index=False),
        file_name="depth_evaluation.csv",
        mime="text/csv",
    )
