"""HTTP service exposing the odometry pipeline as synchronous endpoints."""

from .app import create_app

__all__ = ["create_app"]
