"""Synthetic image sequences for exercising the reconstruction pipeline.

A "head" is a sphere of textured points in front of a fixed camera.  It turns
right, comes back and then tilts down, which is the same as a camera moving on a
circle around the head.  Each frame lists the visible points as keypoints in pixels
with a noisy copy of the point's descriptor, plus a few clutter keypoints.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose, rotation_about
from .sfm import ImageFeatures, Intrinsics

# Yaw and pitch (degrees) of the head in each frame.
DEFAULT_TRAJECTORY = ((0, 0), (15, 0), (30, 0), (45, 0), (30, 0), (15, 0), (0, 0), (0, 20))


@dataclass
class SyntheticSequence:
    images: list
    intrinsics: Intrinsics
    poses: list
    points: np.ndarray
    visible: list  # per frame, the point index of each keypoint (-1 for clutter)

    @property
    def scene_scale(self) -> float:
        """Diameter of the point cloud."""
        return float(2 * np.max(np.linalg.norm(self.points - self.points.mean(axis=0), axis=1)))


def head_pose(yaw_deg: float, pitch_deg: float, center) -> Pose:
    """Camera pose equivalent to turning the head about ``center`` (yaw about y, then pitch about x)."""
    q = rotation_about([1.0, 0.0, 0.0], np.deg2rad(pitch_deg)) @ \
        rotation_about([0.0, 1.0, 0.0], np.deg2rad(yaw_deg))
    center = np.asarray(center, dtype=float)
    return Pose(q, center - q @ center)


def make_sequence(seed: int = 0, n_points: int = 600, radius: float = 1.0, distance: float = 5.0,
                  trajectory=DEFAULT_TRAJECTORY, sigma_px: float = 0.0, descriptor_dim: int = 128,
                  descriptor_noise: float = 0.02, n_clutter: int = 20,
                  intrinsics: Intrinsics | None = None) -> SyntheticSequence:
    rng = np.random.default_rng(seed)
    k = intrinsics or Intrinsics(1500.0, 1500.0, 648.0, 486.0, 0.0)
    width, height = 2 * k.cx, 2 * k.cy
    center = np.array([0.0, 0.0, distance])
    normals = rng.normal(size=(n_points, 3))
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    points = center + radius * normals
    desc = rng.normal(size=(n_points, descriptor_dim))
    desc /= np.linalg.norm(desc, axis=1, keepdims=True)

    images, poses, visible = [], [], []
    for f, (yaw, pitch) in enumerate(trajectory):
        pose = head_pose(yaw, pitch, center)
        cam = pose.transform(points)
        # A surface point is seen when its normal faces the camera.
        facing = np.einsum("ij,ij->i", normals, pose.center - points) > 0.2 * radius
        uv = k.denormalize(cam[:, :2] / cam[:, 2:3])
        inside = (cam[:, 2] > 0) & np.all((uv >= 0) & (uv < [width, height]), axis=1)
        idx = np.flatnonzero(facing & inside)
        uv = uv[idx] + rng.normal(0.0, sigma_px, (len(idx), 2)) if sigma_px > 0 else uv[idx]
        d = desc[idx] + rng.normal(0.0, descriptor_noise, (len(idx), descriptor_dim))
        clutter_uv = rng.uniform([0, 0], [width, height], (n_clutter, 2))
        clutter_d = rng.normal(size=(n_clutter, descriptor_dim))
        clutter_d /= np.linalg.norm(clutter_d, axis=1, keepdims=True)
        order = rng.permutation(len(idx) + n_clutter)
        ids = np.concatenate([idx, -np.ones(n_clutter, dtype=int)])[order]
        images.append(ImageFeatures(np.vstack([uv, clutter_uv])[order],
                                    np.vstack([d, clutter_d])[order], name=f"frame_{f:03d}"))
        poses.append(pose)
        visible.append(ids)
    return SyntheticSequence(images, k, poses, points, visible)
