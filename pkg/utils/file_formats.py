"""
On-disk formats: PFM float maps, 8-bit/16-bit images, colormapped
disparity previews and binary checkpoints.
"""

import logging
import os
import struct

import cv2
import numpy as np

from utils.errors import CheckpointError, ImageFormatError

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MDEPCKPT"
CHECKPOINT_VERSION = 1
CONFIG_PREFIX = "__config__."

# dtype code -> little-endian numpy dtype
DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8")}
_CODE_FOR_KIND = {np.dtype("float32"): 1, np.dtype("float64"): 2, np.dtype("int64"): 3}

IMAGE_EXTENSIONS = (".png", ".ppm", ".jpg", ".jpeg", ".pfm")


# ---------------------------------------------------------------------------
# PFM


def write_pfm(path, data):
    """
    Write a float map as little-endian PFM (scale -1.0).

    Parameters:
    path (str): Output file
    data (ndarray): [H, W] grayscale or [H, W, 3] colour values
    """
    data = np.asarray(data)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise ImageFormatError(f"PFM needs [H, W] or [H, W, 3], got shape {data.shape}")
    height, width = data.shape[:2]
    rows = np.ascontiguousarray(data[::-1].astype("<f4"))
    with open(path, "wb") as handle:
        handle.write(header + b"\n")
        handle.write(f"{width} {height}\n".encode("ascii"))
        handle.write(b"-1.0\n")
        handle.write(rows.tobytes())


def _read_token_line(handle):
    line = handle.readline()
    if not line:
        raise ImageFormatError("unexpected end of PFM header")
    return line.decode("ascii", errors="replace").strip()


def read_pfm(path):
    """Read a PFM file; returns float32 [H, W] or [H, W, 3] in top-to-bottom order."""
    try:
        with open(path, "rb") as handle:
            kind = _read_token_line(handle)
            if kind not in ("PF", "Pf"):
                raise ImageFormatError(f"{path}: not a PFM file (header '{kind}')")
            try:
                width, height = (int(part) for part in _read_token_line(handle).split())
                scale = float(_read_token_line(handle))
            except ValueError as e:
                raise ImageFormatError(f"{path}: malformed PFM header") from e
            payload = handle.read()
    except OSError as e:
        raise ImageFormatError(f"cannot read '{path}': {e.strerror}") from e

    channels = 3 if kind == "PF" else 1
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    expected = width * height * channels * 4
    if len(payload) < expected:
        raise ImageFormatError(f"{path}: truncated PFM payload ({len(payload)} of {expected} bytes)")
    values = np.frombuffer(payload[:expected], dtype=dtype).astype(np.float32)
    shape = (height, width, 3) if channels == 3 else (height, width)
    return values.reshape(shape)[::-1].copy()


# ---------------------------------------------------------------------------
# images


def read_image(path):
    """
    Load an RGB image as float64 in [0, 1], shape [H, W, 3].

    PNG/PPM/JPEG go through OpenCV (8- or 16-bit); PFM files are read
    losslessly.
    """
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pfm":
        data = read_pfm(path).astype(np.float64)
        if data.ndim == 2:
            data = np.repeat(data[..., None], 3, axis=2)
        return data
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageFormatError(f"cannot decode image '{path}'")
    if raw.ndim == 2:
        raw = cv2.cvtColor(raw, cv2.COLOR_GRAY2BGR)
    elif raw.shape[2] == 4:
        raw = cv2.cvtColor(raw, cv2.COLOR_BGRA2BGR)
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    return cv2.cvtColor(raw, cv2.COLOR_BGR2RGB).astype(np.float64) / scale


def write_image(path, rgb):
    """Save a float RGB image in [0, 1] as an 8-bit file (format from extension)."""
    rgb = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    bgr = cv2.cvtColor((rgb * 255.0 + 0.5).astype(np.uint8), cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(path, bgr):
        raise ImageFormatError(f"cannot write image '{path}'")


def colorize_disparity(disp):
    """Min-max normalise a disparity map and apply the magma colormap (BGR uint8)."""
    disp = np.asarray(disp, dtype=np.float64)
    low, high = float(disp.min()), float(disp.max())
    normalised = (disp - low) / (high - low) if high > low else np.zeros_like(disp)
    return cv2.applyColorMap((normalised * 255.0 + 0.5).astype(np.uint8), cv2.COLORMAP_MAGMA)


def write_disparity_png(path, disp):
    if not cv2.imwrite(path, colorize_disparity(disp)):
        raise ImageFormatError(f"cannot write image '{path}'")


# ---------------------------------------------------------------------------
# checkpoints


def config_tensors(config):
    """Numeric fields of a dataclass config as named scalar/vector arrays."""
    out = {}
    for name, value in vars(config).items():
        if isinstance(value, bool) or isinstance(value, str) or value is None:
            continue
        if isinstance(value, int):
            out[CONFIG_PREFIX + name] = np.array(value, dtype=np.int64)
        elif isinstance(value, float):
            out[CONFIG_PREFIX + name] = np.array(value, dtype=np.float64)
        elif isinstance(value, tuple):
            out[CONFIG_PREFIX + name] = np.array(value, dtype=np.int64)
    return out


def save_checkpoint(path, tensors, config=None):
    """
    Write named arrays to the binary checkpoint format.

    Layout: magic, u32 version, u32 entry count, then per entry
    (u32 name length, name, u32 rank, u64 extents, u8 dtype code,
    u64 payload offset), then the little-endian payload.

    Parameters:
    path (str): Output file
    tensors (dict): Name to ndarray (float32, float64 or int64)
    config (NetConfig): Optional; its numeric fields are stored as
        ``__config__.<field>`` entries
    """
    entries = dict(tensors)
    if config is not None:
        entries.update(config_tensors(config))

    manifest = bytearray()
    payload = bytearray()
    for name, array in entries.items():
        array = np.asarray(array)
        code = _CODE_FOR_KIND.get(array.dtype)
        if code is None:
            raise CheckpointError(f"cannot store '{name}' with dtype {array.dtype}")
        encoded = name.encode("utf-8")
        manifest += struct.pack("<I", len(encoded)) + encoded
        manifest += struct.pack("<I", array.ndim)
        manifest += struct.pack(f"<{array.ndim}Q", *array.shape)
        manifest += struct.pack("<BQ", code, len(payload))
        payload += np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes()

    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<II", CHECKPOINT_VERSION, len(entries)))
        handle.write(manifest)
        handle.write(payload)
    logger.debug("Wrote checkpoint %s (%d entries, %d payload bytes)", path, len(entries), len(payload))


def read_manifest(blob):
    """Parse the manifest; returns (entries, payload_start) where each entry is (name, shape, dtype, offset)."""
    view = memoryview(blob)
    try:
        if bytes(view[:8]) != CHECKPOINT_MAGIC:
            raise CheckpointError("bad checkpoint magic (not a checkpoint file)")
        version, count = struct.unpack_from("<II", view, 8)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {version} (this build reads version {CHECKPOINT_VERSION})")
        pos = 16
        entries = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", view, pos)
            pos += 4
            name = bytes(view[pos:pos + name_len]).decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", view, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}Q", view, pos)
            pos += 8 * rank
            code, offset = struct.unpack_from("<BQ", view, pos)
            pos += 9
            if code not in DTYPE_CODES:
                raise CheckpointError(f"unknown dtype code {code} for '{name}'")
            entries.append((name, tuple(shape), DTYPE_CODES[code], offset))
    except struct.error as e:
        raise CheckpointError("truncated checkpoint manifest") from e
    except UnicodeDecodeError as e:
        raise CheckpointError("corrupt tensor name in checkpoint manifest") from e
    return entries, pos


def load_checkpoint(path):
    """
    Read a checkpoint.

    Returns:
    tuple: (dict of name -> ndarray, dict of config field -> value)
    """
    try:
        with open(path, "rb") as handle:
            blob = handle.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint '{path}': {e.strerror}") from e
    entries, start = read_manifest(blob)
    tensors = {}
    config = {}
    for name, shape, dtype, offset in entries:
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        begin = start + offset
        if begin + nbytes > len(blob):
            raise CheckpointError(f"truncated checkpoint payload at '{name}'")
        array = np.frombuffer(blob, dtype=dtype, count=nbytes // dtype.itemsize, offset=begin)
        array = array.reshape(shape).astype(dtype.newbyteorder("="))
        if name.startswith(CONFIG_PREFIX):
            key = name[len(CONFIG_PREFIX):]
            config[key] = array.item() if array.ndim == 0 else tuple(array.tolist())
        else:
            tensors[name] = array
    return tensors, config
