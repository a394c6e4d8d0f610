"""
Selective state-space scan.

The continuous system x' = A x + B u, y = C x + D u is discretised per time
step with an input-dependent step size and evaluated as the linear
recurrence h_k = a_k * h_{k-1} + b_k. Two executors compute the recurrence:
a plain loop (the reference) and a blockwise doubling scan built on the
associative combine ``(a2, b2) o (a1, b1) = (a1 * a2, a2 * b1 + b2)``.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from utils import tensor_core as tc
from utils.errors import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

BLOCK_SIZE = 64
EXECUTORS = ("sequential", "parallel")


@dataclass
class SsmParams:
    """Parameters of one selective scan over sequences of ``d_model`` channels."""

    A_log: tc.Tensor          # [D, N], A = -exp(A_log)
    delta_down: tc.Tensor     # [D, R]
    delta_up: tc.Tensor       # [R, D]
    delta_bias: tc.Tensor     # [D]
    B_weight: tc.Tensor       # [D, N]
    B_bias: tc.Tensor         # [N]
    C_weight: tc.Tensor       # [D, N]
    C_bias: tc.Tensor         # [N]
    D: tc.Tensor              # [D]

    @property
    def d_model(self):
        return self.A_log.shape[0]

    @property
    def state_dim(self):
        return self.A_log.shape[1]


def delta_rank(d_model):
    return math.ceil(d_model / 16)


def xavier_uniform(rng, fan_in, fan_out, shape=None, dtype=None):
    """Glorot/Xavier uniform draw, returned as a requires-grad Tensor."""
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    values = rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))
    return tc.Tensor(values, requires_grad=True, dtype=dtype)


def init_ssm_params(d_model, state_dim, rng, dt_min=1e-3, dt_max=1e-1, dtype=None):
    """
    Create freshly initialised scan parameters.

    Parameters:
    d_model (int): Channels of the scanned sequence
    state_dim (int): Hidden state size N per channel
    rng (numpy.random.Generator): Source of randomness
    dt_min (float): Smallest initial step size
    dt_max (float): Largest initial step size

    Returns:
    SsmParams: New parameters
    """
    rank = delta_rank(d_model)
    a_log = np.log(np.tile(np.arange(1, state_dim + 1, dtype=np.float64), (d_model, 1)))

    # step sizes start log-uniform in [dt_min, dt_max]; store softplus^-1 of them
    dt = np.exp(rng.uniform(math.log(dt_min), math.log(dt_max), size=d_model))
    delta_bias = dt + np.log(-np.expm1(-dt))

    def zeros(*shape):
        return tc.Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)

    return SsmParams(
        A_log=tc.Tensor(a_log, requires_grad=True, dtype=dtype),
        delta_down=xavier_uniform(rng, d_model, rank, dtype=dtype),
        delta_up=xavier_uniform(rng, rank, d_model, dtype=dtype),
        delta_bias=tc.Tensor(delta_bias, requires_grad=True, dtype=dtype),
        B_weight=xavier_uniform(rng, d_model, state_dim, dtype=dtype),
        B_bias=zeros(state_dim),
        C_weight=xavier_uniform(rng, d_model, state_dim, dtype=dtype),
        C_bias=zeros(state_dim),
        D=tc.Tensor(np.ones(d_model), requires_grad=True, dtype=dtype),
    )


# ---------------------------------------------------------------------------
# recurrence executors (plain numpy, no tape)


def combine(first, second):
    """Compose two affine steps: apply ``first`` then ``second``."""
    a1, b1 = first
    a2, b2 = second
    return a1 * a2, a2 * b1 + b2


def recurrence_sequential(a, b):
    """h_k = a_k * h_{k-1} + b_k along axis 0, with h_{-1} = 0."""
    h = np.empty_like(b)
    state = np.zeros_like(b[0])
    for k in range(b.shape[0]):
        state = a[k] * state + b[k]
        h[k] = state
    return h


def _doubling_scan(a, b):
    # inclusive Hillis-Steele scan within one block
    a = a.copy()
    b = b.copy()
    offset = 1
    while offset < b.shape[0]:
        b[offset:] = a[offset:] * b[:-offset] + b[offset:]
        a[offset:] = a[offset:] * a[:-offset]
        offset *= 2
    return a, b


def recurrence_parallel(a, b, block_size=BLOCK_SIZE):
    """
    Same recurrence as ``recurrence_sequential`` via blockwise prefix scans.

    Each block is scanned independently with the doubling scheme; the carry
    from the previous block is then folded in using the block's cumulative
    decay. Reduction order is fixed, so results are deterministic.
    """
    h = np.empty_like(b)
    carry = np.zeros_like(b[0])
    for start in range(0, b.shape[0], block_size):
        stop = min(start + block_size, b.shape[0])
        decay, local = _doubling_scan(a[start:stop], b[start:stop])
        h[start:stop] = local + decay * carry
        carry = h[stop - 1]
    return h


def run_recurrence(a, b, executor="parallel"):
    if executor == "sequential":
        return recurrence_sequential(a, b)
    if executor == "parallel":
        return recurrence_parallel(a, b)
    raise ValueError(f"Unknown scan executor: {executor}")


def linear_recurrence(a, b, executor="parallel"):
    """
    Differentiable h_k = a_k * h_{k-1} + b_k over axis 0 (h_{-1} = 0).

    The adjoint is itself a reverse-time recurrence:
    s_k = g_k + a_{k+1} s_{k+1}, grad_a_k = s_k * h_{k-1}, grad_b_k = s_k.
    """
    a, b = tc.as_tensor(a), tc.as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError("linear_recurrence", a.shape, b.shape)
    if a.ndim < 1 or a.shape[0] == 0:
        raise ShapeError("linear_recurrence", a.shape, detail="need at least one step")
    h = run_recurrence(a.data, b.data, executor)

    def vjp(g):
        shifted = np.concatenate([np.zeros_like(a.data[:1]), a.data[:0:-1]], axis=0)
        s = run_recurrence(shifted, g[::-1], executor)[::-1]
        h_prev = np.concatenate([np.zeros_like(h[:1]), h[:-1]], axis=0)
        return s * h_prev, s.copy()

    return tc.record_op("linear_recurrence", h, (a, b), vjp)


# ---------------------------------------------------------------------------
# discretisation and the scan itself


def state_matrix(params):
    return tc.neg(tc.exp(params.A_log))


def step_sizes(params, u):
    """Per-step, per-channel step size: softplus(low-rank projection + bias) > 0."""
    projected = tc.matmul(tc.matmul(u, params.delta_down), params.delta_up)
    return tc.softplus(tc.add(projected, params.delta_bias))


def selection(params, u):
    """Input-dependent B and C vectors, each [L, N]."""
    b = tc.linear(u, params.B_weight, params.B_bias)
    c = tc.linear(u, params.C_weight, params.C_bias)
    return b, c


def zoh_discretize(delta, A, B):
    """
    Zero-order hold on A with the simplified input scaling on B.

    Parameters:
    delta (Tensor): Step sizes [L, D]
    A (Tensor): State matrix [D, N], strictly negative
    B (Tensor): Input vectors [L, N]

    Returns:
    tuple: (a_bar, b_bar), each [L, D, N]
    """
    delta, A, B = tc.as_tensor(delta), tc.as_tensor(A), tc.as_tensor(B)
    if not np.all(np.isfinite(delta.data)):
        raise NonFiniteError("discretize: step size contains non-finite values", name="delta")
    if not np.all(np.isfinite(A.data)):
        raise NonFiniteError("discretize: state matrix contains non-finite values", name="A")
    if delta.ndim != 2 or A.ndim != 2 or delta.shape[1] != A.shape[0]:
        raise ShapeError("discretize", delta.shape, A.shape)
    if B.shape != (delta.shape[0], A.shape[1]):
        raise ShapeError("discretize", delta.shape, B.shape)
    length, channels = delta.shape
    step = tc.reshape(delta, (length, channels, 1))
    a_bar = tc.exp(tc.mul(step, A))
    b_bar = tc.mul(step, tc.reshape(B, (length, 1, A.shape[1])))
    return a_bar, b_bar


def discretize(params, u):
    """Discretised (a_bar, b_bar) for the sequence ``u`` [L, D]."""
    b, _ = selection(params, u)
    return zoh_discretize(step_sizes(params, u), state_matrix(params), b)


def selective_scan(a_bar, b_bar, c, u, d, executor="parallel", return_states=False):
    """
    Run the discretised scan.

    Parameters:
    a_bar (Tensor): Decay per step [L, D, N]
    b_bar (Tensor): Input scaling per step [L, D, N]
    c (Tensor): Readout vectors [L, N]
    u (Tensor): Input sequence [L, D]
    d (Tensor): Skip gain [D]
    executor (str): "sequential" or "parallel"
    return_states (bool): Also return the hidden states [L, D, N]
        (reference executor only)

    Returns:
    Tensor: Output sequence [L, D] (and the states when requested)
    """
    a_bar, b_bar, c, u, d = (tc.as_tensor(t) for t in (a_bar, b_bar, c, u, d))
    if u.ndim != 2 or a_bar.shape != b_bar.shape or a_bar.shape[:2] != u.shape:
        raise ShapeError("selective_scan", a_bar.shape, u.shape)
    length, channels, state_dim = a_bar.shape
    if c.shape != (length, state_dim) or d.shape != (channels,):
        raise ShapeError("selective_scan", c.shape, d.shape)
    if return_states and executor != "sequential":
        raise ValueError("hidden states are only exposed by the sequential executor")

    drive = tc.mul(b_bar, tc.reshape(u, (length, channels, 1)))
    states = linear_recurrence(a_bar, drive, executor=executor)
    readout = tc.sum_(tc.mul(states, tc.reshape(c, (length, 1, state_dim))), axis=-1)
    y = tc.add(readout, tc.mul(u, d))
    if return_states:
        return y, states
    return y


def ssm_forward(params, u, executor="parallel"):
    """Full selective scan of ``u`` [L, D] with input-dependent parameters."""
    u = tc.as_tensor(u)
    if u.ndim != 2 or u.shape[1] != params.d_model:
        raise ShapeError("ssm_forward", u.shape, params.A_log.shape)
    b, c = selection(params, u)
    a_bar, b_bar = zoh_discretize(step_sizes(params, u), state_matrix(params), b)
    return selective_scan(a_bar, b_bar, c, u, params.D, executor=executor)


def scan_sequential(params, u):
    return ssm_forward(params, u, executor="sequential")


def scan_parallel(params, u):
    return ssm_forward(params, u, executor="parallel")
