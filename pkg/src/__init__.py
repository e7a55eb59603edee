"""
Pacote src - QVuln: combinações críticas de links via QUBO e SQA
"""

__version__ = "1.0.0"

from .network import builtin_nguyen_dupuis, load_network, validate
from .assignment import solve_ue, tstt
from .qubo import fixture_instance, qubo_energy
from .annealer import run_sa, run_sqa
from .oracle import enumerate_exact

__all__ = [
    '__version__',
    'builtin_nguyen_dupuis',
    'load_network',
    'validate',
    'solve_ue',
    'tstt',
    'fixture_instance',
    'qubo_energy',
    'run_sa',
    'run_sqa',
    'enumerate_exact',
]
