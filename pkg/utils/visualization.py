import logging

import numpy as np
import pandas as pd
import plotly.express as px
import plotly.graph_objects as go
from plotly.subplots import make_subplots

logger = logging.getLogger(__name__)

LOSS_TRACES = {
    "loss_total": "Total",
    "loss_photo": "Photometric",
    "loss_smooth": "Smoothness",
}


def _empty_figure(title):
    return go.Figure().update_layout(
        title=title,
        height=400,
        margin=dict(l=50, r=50, t=80, b=50)
    )


def create_loss_chart(curve):
    """
    Plot per-step losses with per-epoch means overlaid.

    Parameters:
    curve (DataFrame): Loss curve with epoch, step and loss columns

    Returns:
    Figure: Plotly figure object
    """
    if curve is None or curve.empty:
        return _empty_figure("No training steps recorded yet")

    fig = make_subplots(rows=1, cols=2, subplot_titles=["Loss per step", "Auto-mask coverage"])
    for column, label in LOSS_TRACES.items():
        if column not in curve.columns:
            continue
        fig.add_trace(
            go.Scatter(x=curve["step"], y=curve[column], mode="lines", name=label),
            row=1, col=1
        )

    epoch_mean = curve.groupby("epoch", as_index=False)["loss_total"].mean()
    last_steps = curve.groupby("epoch")["step"].max().values
    fig.add_trace(
        go.Scatter(x=last_steps, y=epoch_mean["loss_total"], mode="markers",
                   name="Epoch mean", marker=dict(size=9, symbol="diamond")),
        row=1, col=1
    )

    if "mask_coverage" in curve.columns:
        fig.add_trace(
            go.Scatter(x=curve["step"], y=curve["mask_coverage"], mode="lines",
                       name="Mask coverage", showlegend=False),
            row=1, col=2
        )
        fig.update_yaxes(range=[0, 1], row=1, col=2)

    fig.update_layout(
        title="Training Progress",
        height=420,
        margin=dict(l=50, r=50, t=80, b=50)
    )
    return fig


def create_disparity_figure(disp, title="Predicted disparity"):
    """Heatmap of a disparity (or depth) map with the image origin at the top."""
    disp = np.asarray(disp)
    if disp.ndim != 2 or disp.size == 0:
        return _empty_figure("No map to display")
    fig = px.imshow(disp, color_continuous_scale="magma", origin="upper", aspect="equal")
    fig.update_layout(title=title, height=420, margin=dict(l=30, r=30, t=60, b=30))
    return fig


def create_frame_strip(frames, titles=None):
    """Show a few RGB frames side by side (values in [0, 1])."""
    if not frames:
        return _empty_figure("No frames")
    titles = titles or [f"Frame {i}" for i in range(len(frames))]
    fig = make_subplots(rows=1, cols=len(frames), subplot_titles=titles)
    for col, frame in enumerate(frames, start=1):
        rgb = np.clip(np.asarray(frame) * 255.0, 0, 255).astype(np.uint8)
        fig.add_trace(go.Image(z=rgb), row=1, col=col)
        fig.update_xaxes(visible=False, row=1, col=col)
        fig.update_yaxes(visible=False, row=1, col=col)
    fig.update_layout(height=300, margin=dict(l=20, r=20, t=50, b=20))
    return fig


def create_metrics_chart(metrics_df):
    """
    Bar chart of error metrics (lower is better) next to accuracy metrics.

    Parameters:
    metrics_df (DataFrame): One row per image, metric columns

    Returns:
    Figure: Plotly figure object
    """
    if metrics_df is None or metrics_df.empty:
        return _empty_figure("No evaluation results")

    errors = [c for c in ("abs_rel", "sq_rel", "rmse", "rmse_log") if c in metrics_df.columns]
    accuracies = [c for c in ("delta1", "delta2", "delta3") if c in metrics_df.columns]
    means = metrics_df[errors + accuracies].apply(pd.to_numeric, errors="coerce").mean()

    fig = make_subplots(rows=1, cols=2, subplot_titles=["Errors (lower is better)",
                                                         "Accuracy (higher is better)"])
    fig.add_trace(go.Bar(x=errors, y=means[errors].values, name="Errors"), row=1, col=1)
    if accuracies:
        fig.add_trace(go.Bar(x=accuracies, y=means[accuracies].values, name="Accuracy"), row=1, col=2)
        fig.update_yaxes(range=[0, 1], row=1, col=2)
    fig.update_layout(
        title=f"Mean metrics over {len(metrics_df)} images",
        height=400,
        showlegend=False,
        margin=dict(l=50, r=50, t=80, b=50)
    )
    return fig


def create_parameter_chart(breakdown):
    """Pie chart of parameter counts per network part."""
    if breakdown is None or breakdown.empty:
        return _empty_figure("No parameters")
    fig = px.pie(breakdown, names="part", values="parameters", hole=0.4)
    fig.update_layout(title="Parameter breakdown", height=400)
    return fig
