"""View-opacity-dependent 3D Gaussian splatting on the CPU."""

from vodgs.model import Camera, GaussianCloud, init_cloud
from vodgs.rasterizer import render, render_reference

__version__ = "0.1.0"

__all__ = ["Camera", "GaussianCloud", "init_cloud", "render", "render_reference"]
