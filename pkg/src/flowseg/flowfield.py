"""Dense per-pixel 2D displacement fields."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class FlowField:
    """Per-pixel displacement (u, v) in pixels from frame A to frame B.

    uv has shape (H, W, 2) float32; valid marks pixels carrying a real
    displacement (sky pixels in ground-truth flow are invalid).
    """

    uv: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        self.uv = np.asarray(self.uv, dtype=np.float32)
        if self.uv.ndim != 3 or self.uv.shape[2] != 2:
            raise ValueError(f"flow must have shape (H, W, 2), got {self.uv.shape}")
        if self.valid is None:
            self.valid = np.ones(self.uv.shape[:2], dtype=bool)
        else:
            self.valid = np.asarray(self.valid, dtype=bool)
            if self.valid.shape != self.uv.shape[:2]:
                raise ValueError("valid mask shape does not match flow shape")

    @property
    def height(self) -> int:
        return self.uv.shape[0]

    @property
    def width(self) -> int:
        return self.uv.shape[1]

    def magnitude(self) -> np.ndarray:
        return np.sqrt(self.uv[..., 0] ** 2 + self.uv[..., 1] ** 2)

    @staticmethod
    def zeros(height: int, width: int) -> "FlowField":
        return FlowField(np.zeros((height, width, 2), dtype=np.float32))
