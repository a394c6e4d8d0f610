import glob
import logging
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from utils.errors import DataError
from utils.file_formats import IMAGE_EXTENSIONS, read_image, read_pfm
from utils.view_synthesis import CameraModel

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["epoch", "step", "loss_total", "loss_photo", "loss_smooth", "mask_coverage"]
METRIC_COLUMNS = ["abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3"]


@dataclass
class FrameTripletRecord:
    """Frames t-1, t, t+1 ([H, W, 3] floats in [0, 1]) with shared intrinsics."""

    frames: tuple
    camera: CameraModel
    depth: np.ndarray = None
    name: str = ""

    def __post_init__(self):
        if len(self.frames) != 3:
            raise DataError(f"triplet '{self.name}' has {len(self.frames)} frames, expected 3")
        shapes = {np.shape(f) for f in self.frames}
        if len(shapes) != 1:
            raise DataError(f"triplet '{self.name}' mixes frame shapes {sorted(shapes)}")
        height, width = np.shape(self.frames[0])[:2]
        if (self.camera.height, self.camera.width) != (height, width):
            raise DataError(
                f"triplet '{self.name}': intrinsics are for {self.camera.width}x{self.camera.height}, "
                f"frames are {width}x{height}")
        if self.depth is not None and np.shape(self.depth) != (height, width):
            raise DataError(f"triplet '{self.name}': depth shape {np.shape(self.depth)} != {(height, width)}")

    @property
    def target(self):
        return self.frames[1]

    @property
    def sources(self):
        return [self.frames[0], self.frames[2]]


# Function to read the four-number intrinsics file
def read_intrinsics(path, width, height):
    """
    Parse ``fx fy cx cy`` (whitespace separated, '#' comments allowed).

    Parameters:
    path (str): intrinsics.txt
    width (int): Frame width
    height (int): Frame height

    Returns:
    CameraModel: The camera
    """
    try:
        with open(path, "r", encoding="utf-8") as handle:
            text = " ".join(line.split("#")[0] for line in handle)
    except OSError as e:
        raise DataError(f"cannot read intrinsics '{path}': {e.strerror}") from e
    parts = text.split()
    if len(parts) != 4:
        raise DataError(f"{path}: expected 4 numbers (fx fy cx cy), found {len(parts)}")
    try:
        fx, fy, cx, cy = (float(p) for p in parts)
        return CameraModel(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)
    except ValueError as e:
        raise DataError(f"{path}: {e}") from e


# Function to list frame files in sorted order
def list_frames(directory):
    files = sorted(
        path for path in glob.glob(os.path.join(directory, "*"))
        if os.path.splitext(path)[1].lower() in IMAGE_EXTENSIONS
    )
    return files


def make_triplets(frames, camera, depths=None, names=None):
    """Slide a window of three over consecutive frames."""
    records = []
    for index in range(1, len(frames) - 1):
        records.append(FrameTripletRecord(
            frames=(frames[index - 1], frames[index], frames[index + 1]),
            camera=camera,
            depth=None if depths is None else depths[index],
            name=names[index] if names else f"frame_{index:05d}",
        ))
    return records


def load_dataset_dir(directory):
    """
    Load ``frames/`` + ``intrinsics.txt`` (+ optional ``depth/*.pfm``) as triplets.

    Parameters:
    directory (str): Dataset root

    Returns:
    list: FrameTripletRecord for every interior frame
    """
    frame_dir = os.path.join(directory, "frames")
    paths = list_frames(frame_dir)
    if len(paths) < 3:
        raise DataError(f"'{frame_dir}' must hold at least 3 frames, found {len(paths)}")
    frames = [read_image(path) for path in paths]
    height, width = frames[0].shape[:2]
    for path, frame in zip(paths, frames):
        if frame.shape[:2] != (height, width):
            raise DataError(f"'{path}' is {frame.shape[1]}x{frame.shape[0]}, expected {width}x{height}")
    camera = read_intrinsics(os.path.join(directory, "intrinsics.txt"), width, height)

    depths = None
    depth_paths = sorted(glob.glob(os.path.join(directory, "depth", "*.pfm")))
    if depth_paths:
        if len(depth_paths) != len(paths):
            raise DataError(f"found {len(depth_paths)} depth maps for {len(paths)} frames")
        depths = [read_pfm(path).astype(np.float64) for path in depth_paths]

    names = [os.path.splitext(os.path.basename(p))[0] for p in paths]
    records = make_triplets(frames, camera, depths, names)
    logger.info("Loaded %d triplets from %s (%dx%d)", len(records), directory, width, height)
    return records


def loss_curve_frame(rows):
    """Per-step loss rows as a DataFrame in the CSV column order."""
    return pd.DataFrame(rows, columns=LOSS_COLUMNS)


def write_loss_csv(path, rows):
    loss_curve_frame(rows).to_csv(path, index=False)


def epoch_means(curve):
    """Mean of each loss column per epoch."""
    if curve.empty:
        return curve
    return curve.drop(columns=["step"]).groupby("epoch", as_index=False).mean()


def metrics_row_frame(reports, names=None):
    """One row per report in the standard metric column order (plus pixel counts)."""
    rows = [[getattr(r, c) for c in METRIC_COLUMNS] + [r.n_valid_pixels] for r in reports]
    frame = pd.DataFrame(rows, columns=METRIC_COLUMNS + ["n_valid_pixels"])
    if names is not None:
        frame.insert(0, "image", names)
    return frame


def format_metrics_csv(report):
    """Header plus one CSV line of the seven metrics."""
    values = ",".join(f"{getattr(report, c):.6f}" for c in METRIC_COLUMNS)
    return ",".join(METRIC_COLUMNS) + "\n" + values + "\n"
