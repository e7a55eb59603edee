"""
Cache de avaliações de TSTT por cenário de interrupção.
Usa Redis quando QVULN_REDIS_URL está definido; senão um dicionário local.
"""

import hashlib
import json
import logging
import os
import threading
from functools import wraps
from typing import Any, Callable, Optional

import redis

logger = logging.getLogger(__name__)

KEY_PREFIX = "qvuln"


class CacheManager:
    """
    Gerenciador de cache com Redis opcional e fallback em memória.

    Os valores são determinísticos para uma chave, então escritas
    concorrentes são seguras (a última vence).
    """

    def __init__(self, redis_client=None, ttl: Optional[int] = None):
        """
        Inicializa o gerenciador de cache.

        Args:
            redis_client: Cliente Redis (opcional)
            ttl: Tempo de vida das chaves no Redis, em segundos
        """
        self.redis = redis_client
        self.ttl = ttl
        self._enabled = redis_client is not None
        self._local = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

        if self._enabled:
            logger.info("✅ Cache Redis habilitado")
        else:
            logger.debug("Cache em memória (Redis não configurado)")

    @property
    def enabled(self) -> bool:
        """Retorna se o Redis está habilitado e respondendo."""
        if not self._enabled:
            return False

        try:
            self.redis.ping()
            return True
        except Exception as e:
            logger.error(f"Redis não disponível: {e}")
            return False

    def _generate_key(self, prefix: str, *args, **kwargs) -> str:
        """
        Gera chave única baseada nos argumentos.

        Args:
            prefix: Prefixo da chave (ex: 'tstt')
            args: Argumentos posicionais
            kwargs: Argumentos nomeados

        Returns:
            Chave no formato qvuln:<prefix>:<hash>
        """
        key_parts = [str(arg) for arg in args]
        key_parts.extend([f"{k}={v}" for k, v in sorted(kwargs.items())])
        key_string = "|".join(key_parts)

        key_hash = hashlib.md5(key_string.encode()).hexdigest()[:16]

        return f"{KEY_PREFIX}:{prefix}:{key_hash}"

    def get(self, key: str) -> Optional[Any]:
        """Recupera valor do cache (None se ausente)."""
        with self._lock:
            if key in self._local:
                self.hits += 1
                return self._local[key]

        if self.enabled:
            try:
                value = self.redis.get(key)
                if value:
                    decoded = json.loads(value)
                    with self._lock:
                        self._local[key] = decoded
                        self.hits += 1
                    return decoded
            except Exception as e:
                logger.error(f"Erro ao ler cache {key}: {e}")

        with self._lock:
            self.misses += 1
        return None

    def set(self, key: str, value: Any) -> bool:
        """Armazena valor (memória sempre; Redis se habilitado)."""
        with self._lock:
            self._local[key] = value

        if not self.enabled:
            return True

        try:
            serialized = json.dumps(value, default=str)
            if self.ttl:
                self.redis.setex(key, self.ttl, serialized)
            else:
                self.redis.set(key, serialized)
            return True
        except Exception as e:
            logger.error(f"Erro ao salvar cache {key}: {e}")
            return False

    def clear_all(self) -> int:
        """
        Limpa as chaves do QVuln.

        Returns:
            Número de chaves removidas (memória + Redis)
        """
        with self._lock:
            removed = len(self._local)
            self._local.clear()

        if self.enabled:
            try:
                keys = self.redis.keys(f"{KEY_PREFIX}:*")
                if keys:
                    removed += self.redis.delete(*keys)
            except Exception as e:
                logger.error(f"Erro ao limpar cache: {e}")

        return removed

    def get_stats(self) -> dict:
        """Estatísticas de uso (hits, misses, taxa de acerto)."""
        return {
            'backend': 'redis' if self._enabled else 'memory',
            'entries': len(self._local),
            'hits': self.hits,
            'misses': self.misses,
            'hit_rate': self._calculate_hit_rate(self.hits, self.misses),
        }

    @staticmethod
    def _calculate_hit_rate(hits: int, misses: int) -> float:
        if hits + misses == 0:
            return 0.0
        return round((hits / (hits + misses)) * 100, 2)


def from_env(env=None) -> CacheManager:
    """Constrói o cache a partir de QVULN_REDIS_URL (se definido)."""
    env = os.environ if env is None else env
    url = env.get('QVULN_REDIS_URL')
    if not url:
        return CacheManager()

    try:
        client = redis.from_url(url)
        client.ping()
        return CacheManager(client)
    except Exception as e:
        logger.warning(f"⚠️  Redis indisponível ({e}); cache em memória")
        return CacheManager()


def cache_result(cache: CacheManager, prefix: str,
                 key_func: Optional[Callable] = None):
    """
    Decorator para memoizar resultados de funções no CacheManager.

    Args:
        cache: Instância do cache
        prefix: Prefixo da chave
        key_func: Função customizada para gerar a chave (opcional)

    Exemplo:
        @cache_result(cache, 'tstt', key_func=lambda u: bits(u))
        def evaluate(u):
            return solve_ue(network, scenario_for(u)).tstt
    """
    def decorator(f):
        @wraps(f)
        def wrapper(*args, **kwargs):
            if key_func:
                cache_key = cache._generate_key(prefix, key_func(*args,
                                                                 **kwargs))
            else:
                cache_key = cache._generate_key(prefix, *args, **kwargs)

            cached = cache.get(cache_key)
            if cached is not None:
                return cached

            result = f(*args, **kwargs)
            if result is not None:
                cache.set(cache_key, result)
            return result

        return wrapper
    return decorator
