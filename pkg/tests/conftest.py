"""
Fixtures compartilhadas dos testes do QVuln
"""
import numpy as np
import pytest

from src.models import Link, Network, OdPair, QuboInstance
from src.network import builtin_nguyen_dupuis
from src.qubo import fixture_instance

# TSTT de base da Nguyen-Dupuis (demanda média) e do par 16-19 interrompido
ND_BASELINE_TSTT = 5749.262154
ND_JOINT_16_19_TSTT = 42980.59


@pytest.fixture(scope="session")
def nd_network():
    """Rede Nguyen-Dupuis embutida (demanda média)"""
    return builtin_nguyen_dupuis("medium")


@pytest.fixture
def nd_qubo():
    """QUBO tabelada da Nguyen-Dupuis, só termos de pares, k = 2"""
    return fixture_instance(k=2)


@pytest.fixture
def parallel_network():
    """Dois links paralelos idênticos entre os nós 1 e 2, 100 pcu/h"""
    return Network(
        nodes=(1, 2),
        links=(
            Link(id=1, from_node=1, to_node=2, free_flow_time=1.0,
                 capacity=100.0),
            Link(id=2, from_node=1, to_node=2, free_flow_time=1.0,
                 capacity=100.0),
        ),
        od_pairs=(OdPair(1, 2, 100.0),),
        name="parallel",
    )


@pytest.fixture
def uneven_network():
    """Links paralelos com tempos livres 1 h e 2 h"""
    return Network(
        nodes=(1, 2),
        links=(
            Link(id=1, from_node=1, to_node=2, free_flow_time=1.0,
                 capacity=100.0),
            Link(id=2, from_node=1, to_node=2, free_flow_time=2.0,
                 capacity=100.0),
        ),
        od_pairs=(OdPair(1, 2, 100.0),),
        name="uneven",
    )


@pytest.fixture
def small_qubo():
    """Instância de 5 links com interações de sinais mistos"""
    c = np.array([10.0, 4.0, 7.0, 1.0, 3.0])
    B = np.zeros((5, 5))
    B[0, 1] = B[1, 0] = 6.0
    B[2, 3] = B[3, 2] = -2.0
    B[1, 4] = B[4, 1] = 1.5
    return QuboInstance(c=c, B=B, lam=100.0, k=2)


@pytest.fixture
def out_dir(tmp_path):
    path = tmp_path / "runs"
    path.mkdir()
    return path
