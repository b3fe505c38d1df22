"""Residual tactile calibration and the bilateral force-symmetry loss.

Live force fields are first expressed relative to a calibrated pre-contact
reference (zero for symmetric objects). The regularizer then flips the right
residual map along its row axis, encodes it with the shared tactile encoder,
and penalizes the squared embedding distance to the left encoding; a balanced
grasp therefore costs nothing regardless of encoder weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T


class CalibrationError(RuntimeError):
    """Raised when reference capture preconditions do not hold."""


@dataclass
class CalibrationReference:
    """Per-taxel mean force fields captured while holding still."""

    left: np.ndarray
    right: np.ndarray
    frames: int

    @classmethod
    def zero(cls, shape=(3, 32, 32)) -> "CalibrationReference":
        # symmetric-object mode: residual equals the raw reading
        return cls(np.zeros(shape, np.float32), np.zeros(shape, np.float32), frames=0)


def calibrate(env, hold_steps: int = 10) -> CalibrationReference:
    """Average ``hold_steps`` motionless frames of both finger fields.

    The environment must expose ``grasped``, ``settle(steps)`` and
    ``read_raw_tactile() -> (left, right)``.
    """
    if hold_steps < 1:
        raise ValueError("hold_steps must be >= 1")
    if not getattr(env, "grasped", False):
        raise CalibrationError("calibration requires a grasped object")
    left_acc = None
    right_acc = None
    for _ in range(hold_steps):
        env.settle(1)
        left, right = env.read_raw_tactile()
        left_acc = left.astype(np.float64) if left_acc is None else left_acc + left
        right_acc = right.astype(np.float64) if right_acc is None else right_acc + right
    return CalibrationReference(
        (left_acc / hold_steps).astype(np.float32),
        (right_acc / hold_steps).astype(np.float32),
        frames=hold_steps,
    )


def residual(raw: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Force field relative to its calibrated reference."""
    raw = np.asarray(raw, np.float32)
    ref = np.asarray(ref, np.float32)
    if raw.shape != ref.shape:
        raise ValueError(f"residual shape mismatch: raw {raw.shape} vs reference {ref.shape}")
    return raw - ref


def symmetry_loss(left_field, right_field, encoder, flip_axis: int = -2) -> T.Tensor:
    """Mean over the batch of the squared embedding gap between the left field
    and the flipped-then-encoded right field. Gradients reach the encoder."""
    left = left_field if isinstance(left_field, T.Tensor) else T.Tensor(left_field)
    right = right_field if isinstance(right_field, T.Tensor) else T.Tensor(right_field)
    h_left = encoder(left)
    h_right_mirrored = encoder(T.flip(right, axis=flip_axis))
    diff = h_left - h_right_mirrored
    return T.mean(T.sum_(diff * diff, axis=1))


@dataclass
class SymmetryLossReport:
    loss: float
    mean_embedding_gap: float
    lambda_sym: float


def evaluate_symmetry(left_field, right_field, encoder, lambda_sym: float,
                      flip_axis: int = -2) -> SymmetryLossReport:
    """Off-graph summary of the regularizer for logging."""
    with T.no_grad():
        left = left_field if isinstance(left_field, T.Tensor) else T.Tensor(left_field)
        right = right_field if isinstance(right_field, T.Tensor) else T.Tensor(right_field)
        h_l = encoder(left).data
        h_r = encoder(T.flip(right, axis=flip_axis)).data
    gaps = np.linalg.norm(h_l - h_r, axis=1)
    return SymmetryLossReport(
        loss=float(np.mean(gaps**2)),
        mean_embedding_gap=float(np.mean(gaps)),
        lambda_sym=float(lambda_sym),
    )


def combine_losses(l_ppo: T.Tensor, l_sym, lambda_sym: float) -> T.Tensor:
    """Weighted training objective; lambda 0 returns the task loss unchanged."""
    if lambda_sym < 0:
        raise ValueError(f"lambda_sym must be >= 0, got {lambda_sym}")
    if lambda_sym == 0.0:
        return l_ppo
    return l_ppo + float(lambda_sym) * l_sym
