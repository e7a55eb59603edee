"""
Utilitários de validação e tratamento de erros do QVuln.
Hierarquia de exceções, validadores simples e decorator para isolar falhas.
"""

import logging
import math
from functools import wraps

from wtforms.validators import ValidationError

logger = logging.getLogger(__name__)


class QVulnError(Exception):
    """Erro base de todas as falhas conhecidas do QVuln."""


class NetworkParseError(QVulnError, ValidationError):
    """Arquivo de rede ilegível; carrega o número da linha."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = f"{path}:" if path else ""
        prefix = f"{where}linha {line}: " if line is not None else where
        super().__init__(f"{prefix}{message}")


class NetworkValidationError(QVulnError, ValidationError):
    """Rede carregada viola um invariante (check nomeado em `check`)."""

    def __init__(self, check, message):
        self.check = check
        super().__init__(f"[{check}] {message}")


class CoefficientSchemaError(QVulnError, ValidationError):
    """CSV/JSON de coeficientes fora do esquema esperado."""


class ConfigValidationError(QVulnError, ValidationError):
    """Configuração de experimento inválida."""

    def __init__(self, errors):
        self.errors = errors
        super().__init__(f"Configuração inválida: {errors}")


class BprDomainError(QVulnError, ValueError):
    """Capacidade efetiva nula: custo BPR infinito."""


class InfeasibleAssignmentError(QVulnError, RuntimeError):
    """Par OD sem rota sob o cenário (hipótese de conectividade violada)."""

    def __init__(self, od_pair, link=None, pair=None):
        self.od_pair = od_pair
        self.link = link
        self.pair = pair
        tag = ""
        if link is not None:
            tag = f" (link interrompido {link})"
        elif pair is not None:
            tag = f" (par interrompido {pair})"
        super().__init__(
            f"Par OD {od_pair[0]}->{od_pair[1]} sem rota viável{tag}"
        )


class CoefficientError(QVulnError, ValueError):
    """Coeficientes inconsistentes ou sem escala para ancorar lambda."""


class EnumerationGuardError(QVulnError, ValueError):
    """Enumeração exata recusada: C(n,k) acima do limite."""

    def __init__(self, count, guard):
        self.count = count
        self.guard = guard
        super().__init__(
            f"Enumeração recusada: C(n,k) = {count} excede o limite {guard}"
        )


def safe_solver_call(default_return=None, log_error=True):
    """
    Decorator para isolar falhas de uma célula de experimento.

    Args:
        default_return: Valor retornado em caso de erro (None = relança)
        log_error: Se deve logar o erro

    Returns:
        Decorator que captura exceções do solver

    Exemplo:
        @safe_solver_call(default_return={'status': 'failed'})
        def run_cell(k):
            return run_coefficient_mode(network, config)
    """
    def decorator(f):
        @wraps(f)
        def wrapper(*args, **kwargs):
            try:
                return f(*args, **kwargs)
            except Exception as e:
                if log_error:
                    logger.error(
                        f"Erro em chamada de solver ({f.__name__}): {str(e)}",
                        exc_info=True
                    )

                if default_return is not None:
                    if callable(default_return):
                        return default_return(e)
                    return default_return
                raise
        return wrapper
    return decorator


def ensure_positive(value, name, strict=True):
    """
    Valida que um número é positivo.

    Raises:
        ValueError: Se o valor for não numérico, não finito ou fora do domínio
    """
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"{name} deve ser numérico, recebido {value!r}")

    if not math.isfinite(number):
        raise ValueError(f"{name} deve ser finito")

    if strict and number <= 0:
        raise ValueError(f"{name} deve ser > 0, recebido {number}")
    if not strict and number < 0:
        raise ValueError(f"{name} deve ser >= 0, recebido {number}")

    return number


def validate_probability(value, name):
    """Valida probabilidade em [0, 1]."""
    number = ensure_positive(value, name, strict=False)
    if number > 1:
        raise ValueError(f"{name} deve estar em [0, 1], recebido {number}")
    return number


def validate_interval(interval, name="intervalo", require_positive_lo=True):
    """
    Valida um intervalo [lo, hi] contido em [0, 1].

    Args:
        interval: Par (lo, hi)
        name: Nome usado nas mensagens
        require_positive_lo: Exige lo > 0 (razão residual nula é inválida)

    Returns:
        Tupla (lo, hi) como floats

    Raises:
        ValueError: Se o intervalo for inválido
    """
    try:
        lo, hi = (float(v) for v in interval)
    except (TypeError, ValueError):
        raise ValueError(f"{name} deve ser um par [lo, hi]")

    if not (0.0 <= lo <= hi <= 1.0):
        raise ValueError(f"{name} deve satisfazer 0 <= lo <= hi <= 1")

    if require_positive_lo and lo <= 0.0:
        raise ValueError(f"{name}: lo deve ser > 0")

    return lo, hi


def parse_link_set(text):
    """
    Converte '16,19' ou '16 19' em tupla ordenada de ids de links.

    Raises:
        ValueError: Se algum id não for inteiro positivo
    """
    if text is None:
        return ()
    if isinstance(text, (list, tuple)):
        tokens = [str(t) for t in text]
    else:
        tokens = text.replace(',', ' ').replace('-', ' ').split()

    ids = []
    for token in tokens:
        try:
            link_id = int(token)
        except ValueError:
            raise ValueError(f"Id de link inválido: {token!r}")
        if link_id < 1:
            raise ValueError(f"Id de link deve ser >= 1: {link_id}")
        ids.append(link_id)

    return tuple(sorted(set(ids)))
