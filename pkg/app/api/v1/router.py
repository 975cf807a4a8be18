"""
API v1 Router.
Aggregates all endpoint routers for API version 1.
"""

from fastapi import APIRouter

from app.api.v1.endpoints import oracle, regimes, variance

api_router = APIRouter()

api_router.include_router(oracle.router)
api_router.include_router(variance.router)
api_router.include_router(regimes.router)
