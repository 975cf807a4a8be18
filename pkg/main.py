"""
uvicorn entry point for the BMC lab HTTP API (oracle, variance, regimes).
Experiments run through the `bmc-lab` CLI instead.

Usage:
    uvicorn main:app --host 127.0.0.1 --port 8000
"""

from app.main import app

__all__ = ["app"]
