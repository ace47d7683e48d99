"""Per-pixel normal prediction network.

A small encoder-decoder (two stride-2 downsamples, two bilinear
upsamples, ~54k parameters) that maps a grayscale rendering to a
camera-space unit normal per pixel.  Output normals are explicitly
normalized to unit length.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class NormalNet(nn.Module):
    def __init__(self, width: int = 16):
        super().__init__()
        w = width
        self.enc1 = nn.Conv2d(1, w, 3, padding=1)
        self.enc2 = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.enc3 = nn.Conv2d(2 * w, 3 * w, 3, stride=2, padding=1)
        self.mid = nn.Conv2d(3 * w, 3 * w, 3, padding=1)
        self.dec1 = nn.Conv2d(3 * w, int(1.5 * w), 3, padding=1)
        self.dec2 = nn.Conv2d(int(1.5 * w), w, 3, padding=1)
        self.head = nn.Conv2d(w, 3, 3, padding=1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        x = F.relu(self.enc1(image))
        x = F.relu(self.enc2(x))
        x = F.relu(self.enc3(x))
        x = F.relu(self.mid(x))
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = F.relu(self.dec1(x))
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = F.relu(self.dec2(x))
        raw = self.head(x)
        return F.normalize(raw, dim=1, eps=1e-8)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def angle_loss(pred: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean angle (radians) between unit normals over mask pixels.

    The dot product is clamped slightly inside [-1,1]; acos has infinite
    slope at the ends and would otherwise blow up the gradient.
    """
    dots = (pred * gt).sum(dim=1).clamp(-1.0 + 1e-6, 1.0 - 1e-6)
    angles = torch.acos(dots)
    weight = mask.to(angles.dtype)
    total = weight.sum().clamp(min=1.0)
    return (angles * weight).sum() / total
