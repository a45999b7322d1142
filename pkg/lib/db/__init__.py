# Database package
from .results_database import ExperimentResultsDB

__all__ = ['ExperimentResultsDB']
