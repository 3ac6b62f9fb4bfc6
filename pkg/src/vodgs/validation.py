"""Input checks shared by the public entry points."""

from __future__ import annotations

import numpy as np


def check_image(img, name: str = "image", channels: int | None = 3) -> np.ndarray:
    """Return ``img`` as a finite float64 ``(H, W, C)`` array or raise."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or (channels is not None and a.shape[2] != channels):
        want = f"(H, W, {channels})" if channels is not None else "(H, W, C)"
        raise ValueError(f"{name} must have shape {want}, got {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_same_shape(a, b, names=("a", "b")) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{names[0]} and {names[1]} differ in shape: {np.shape(a)} vs {np.shape(b)}")


def check_scene(scene, need_test: bool = False, need_matches: bool = False):
    """Validate the pieces of a scene an operation relies on."""
    for attr in ("train_cams", "train_images", "test_cams", "test_images"):
        if not hasattr(scene, attr):
            raise TypeError(f"expected a scene with {attr!r}, got {type(scene).__name__}")
    if not scene.train_cams:
        raise ValueError("scene has no training views")
    if need_test and not scene.test_cams:
        raise ValueError("scene has no test views")
    if need_matches and scene.matches is None:
        raise ValueError("scene has no match matrix")
    for cam, img in zip(list(scene.train_cams) + list(scene.test_cams),
                        list(scene.train_images) + list(scene.test_images)):
        a = check_image(img, f"image of camera {cam.id}")
        if a.shape[:2] != (cam.height, cam.width):
            raise ValueError(f"image of camera {cam.id} is {a.shape[:2]}, camera is {(cam.height, cam.width)}")
    return scene


def check_cameras(cams) -> list:
    cams = list(cams)
    if not cams:
        raise ValueError("camera list is empty")
    ids = [c.id for c in cams]
    if len(set(ids)) != len(ids):
        raise ValueError("camera ids must be unique")
    return cams
