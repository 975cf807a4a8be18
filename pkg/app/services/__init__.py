"""
Business logic services.
"""

from app.services.hermite_service import HermiteService, hermite_service
from app.services.oracle_service import MomentRequest, OracleService, oracle_service
from app.services.variance_service import VarianceReport, VarianceService, variance_service
from app.services.simulation_service import (
    EnsembleAccumulator,
    SimulationConfig,
    SimulationService,
    simulation_service,
)
from app.services.stat_service import CltTolerances, CltVerdict, StatService, stat_service
from app.services.supercritical_service import SupercriticalService, supercritical_service
from app.services.export_service import CsvExportService, csv_export_service
from app.services.experiment_service import ExperimentService, experiment_service

__all__ = [
    "HermiteService",
    "hermite_service",
    "MomentRequest",
    "OracleService",
    "oracle_service",
    "VarianceReport",
    "VarianceService",
    "variance_service",
    "EnsembleAccumulator",
    "SimulationConfig",
    "SimulationService",
    "simulation_service",
    "CltTolerances",
    "CltVerdict",
    "StatService",
    "stat_service",
    "SupercriticalService",
    "supercritical_service",
    "CsvExportService",
    "csv_export_service",
    "ExperimentService",
    "experiment_service",
]
