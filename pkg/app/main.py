"""
HTTP front end of the BMC lab.
Serves the exact moment oracle, the limit variances and the regime
classification of the BAR kernel; simulations stay on the `bmc-lab` CLI.
"""

from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware
from loguru import logger

from app.api.v1.router import api_router
from app.core.config import settings
from app.core.logging import setup_logging

DESCRIPTION = """
Bifurcating Markov chains on the binary tree with the symmetric Gaussian
autoregressive kernel `X_2k = a X_k + eps`, `X_2k+1 = a X_k + eps'`.

* **Oracle**: exact many-to-one moments of generation and tree sums
* **Variance**: Sigma_G, Sigma_T and sequence variances of the CLTs
* **Regimes**: sub-critical (2a^2 < 1), critical (2a^2 = 1), super-critical (2a^2 > 1)
"""

OPENAPI_TAGS = [
    {"name": "Oracle", "description": "E[M_G_n(f)], E[M_G_n(f)^2], E[M_G_n(f) M_G_m(g)] and tree moments"},
    {"name": "Variance", "description": "Limit variances with truncation bounds"},
    {"name": "Regimes", "description": "Regime label and normalisation exponent over a grid of a"},
]


@asynccontextmanager
async def lifespan(app: FastAPI):
    setup_logging()
    logger.info(f"Starting {settings.APP_NAME} v{settings.APP_VERSION} ({settings.ENVIRONMENT})")
    logger.info(
        f"Hermite degree <= {settings.MAX_HERMITE_DEGREE}, "
        f"critical tolerance {settings.CRITICAL_TOLERANCE:g}"
    )

    yield

    logger.info(f"Stopping {settings.APP_NAME}")


app = FastAPI(
    title=settings.APP_NAME,
    version=settings.APP_VERSION,
    summary="Exact moments and limit variances of bifurcating autoregressive chains",
    description=DESCRIPTION,
    openapi_tags=OPENAPI_TAGS,
    openapi_url=f"{settings.API_V1_STR}/openapi.json",
    docs_url="/docs",
    redoc_url="/redoc",
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.BACKEND_CORS_ORIGINS,
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

app.include_router(api_router, prefix=settings.API_V1_STR)


@app.get("/", tags=["Root"])
def root():
    """Service name, version and the analytic endpoints it exposes."""
    return {
        "service": settings.APP_NAME,
        "version": settings.APP_VERSION,
        "kernel": "BAR: X_2k = a X_k + eps_2k, X_2k+1 = a X_k + eps_2k+1, eps ~ N(0, sigma^2)",
        "endpoints": {
            "oracle": f"{settings.API_V1_STR}/oracle/moment",
            "variance": f"{settings.API_V1_STR}/variance",
            "regimes": f"{settings.API_V1_STR}/regimes",
        },
        "docs": "/docs",
    }


@app.get("/health", tags=["Health"])
def health_check():
    return {
        "status": "healthy",
        "version": settings.APP_VERSION,
        "max_hermite_degree": settings.MAX_HERMITE_DEGREE,
    }
