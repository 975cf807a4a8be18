"""
API Dependencies module.
Turns request parameters into kernels and observables, and library errors
into HTTP errors.
"""

from contextlib import contextmanager
from typing import Iterator, Optional

from fastapi import HTTPException, status

from app.core.exceptions import BmcError
from app.models.enums import TailMode
from app.models.kernels import BarKernel
from app.models.observables import Observable, ObservableSequence
from app.schemas.base import KernelParams, ObservableSpec
from app.schemas.experiment import SequenceSection
from app.services.hermite_service import hermite_service


@contextmanager
def http_errors() -> Iterator[None]:
    """
    Map library errors to 422 responses.

    Usage:
        with http_errors():
            value = oracle_service.evaluate(request, kernel)
    """
    try:
        yield
    except BmcError as e:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail={"message": e.message if e.detail is None else f"{e.message}: {e.detail}", "code": e.code},
        ) from e
    except ValueError as e:
        raise HTTPException(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail={"message": str(e), "code": "INVALID_INPUT"},
        ) from e


def get_kernel(params: KernelParams) -> BarKernel:
    """BAR kernel with a Hermite basis; sigma = 0 is refused here."""
    with http_errors():
        kernel = BarKernel(a=params.a, sigma=params.sigma)
        if kernel.is_degenerate:
            raise ValueError("sigma = 0 is a sampling-only mode; analytic endpoints need sigma > 0")
    return kernel


def get_observable(spec: Optional[ObservableSpec], kernel: BarKernel) -> Optional[Observable]:
    if spec is None:
        return None
    with http_errors():
        return hermite_service.from_spec(spec, kernel)


def get_sequence(section: Optional[SequenceSection], kernel: BarKernel) -> Optional[ObservableSequence]:
    if section is None:
        return None
    entries = tuple(get_observable(spec, kernel) for spec in section.entries)
    with http_errors():
        return ObservableSequence(entries, TailMode(section.tail))
