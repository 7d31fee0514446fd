"""
Retry helpers with exponential backoff.

backoff_delay() is shared by the model gateway (seeded jitter) and by the
HTTP clients, which use the retry_with_backoff decorator.
"""

import functools
import logging
import random
import threading
import time
from typing import Callable, Optional, Tuple, Type

logger = logging.getLogger("Materializer.Retry")

_jitter_lock = threading.Lock()


def backoff_delay(attempt: int, base: float, cap: float, rng: Optional[random.Random] = None) -> float:
    """
    Delay before retry number `attempt` (0-based). Without an rng this is
    min(cap, base * 2**attempt); with one it is full jitter, drawn uniformly
    from [0, that value], so it never exceeds cap.
    """
    delay = min(cap, base * (2 ** attempt))
    if rng is not None:
        with _jitter_lock:
            delay = rng.uniform(0, delay)
    return delay


def retry_with_backoff(
    max_retries: int = 3,
    base_delay: float = 0.5,
    max_delay: float = 30.0,
    exceptions: Tuple[Type[Exception], ...] = (Exception,),
    sleep: Callable[[float], None] = time.sleep,
):
    """
    Retry decorator with exponential backoff.

    The wrapped call is attempted at most max_retries + 1 times; the last
    exception is re-raised.

    Usage:
        @retry_with_backoff(max_retries=3, exceptions=(requests.RequestException,))
        def fetch():
            ...
    """
    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            attempt = 0
            while True:
                try:
                    return func(*args, **kwargs)
                except exceptions as e:
                    if attempt >= max_retries:
                        logger.error(f"{func.__name__} failed after {max_retries} retries: {e}")
                        raise
                    delay = backoff_delay(attempt, base_delay, max_delay)
                    attempt += 1
                    logger.warning(
                        f"{func.__name__} failed (attempt {attempt}/{max_retries}), "
                        f"retrying in {delay:.1f}s: {e}"
                    )
                    sleep(delay)
        return wrapper
    return decorator
