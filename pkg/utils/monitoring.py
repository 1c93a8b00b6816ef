"""
Timing and machine monitoring

Features:
- timed: decorator logging a function's wall time at DEBUG level
- safe_execute: decorator returning a default instead of raising
- PerformanceMonitor: named timing sections with slow-section warnings
- HealthCheck: process memory and the hardware descriptor written next to
  benchmark results
- get_run_report: section timings and memory logged when a command ends
"""

import platform
import time
from contextlib import contextmanager
from functools import wraps
from typing import Any, Dict, List, Optional

import numpy as np
import psutil
import scipy

from utils.logger import setup_logger

logger = setup_logger(__name__)


# ==================== UTILITY DECORATORS ====================

def timed(func):
    """Decorator to measure function execution time"""
    @wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.perf_counter()
        try:
            return func(*args, **kwargs)
        finally:
            duration = time.perf_counter() - start_time
            logger.debug(f"{func.__name__} executed in {duration:.4f}s")
    return wrapper


def safe_execute(default_return=None):
    """Decorator for best-effort helpers whose failure must not abort a run"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except Exception as e:
                logger.error(f"Error in {func.__name__}: {e}", exc_info=True)
                return default_return
        return wrapper
    return decorator


# ==================== PERFORMANCE MONITOR ====================

class PerformanceMonitor:
    """
    Track execution times of named sections

    Usage:
        with performance_monitor.track('sweep'):
            ...
    """

    def __init__(self, slow_threshold: float = 600.0):
        """
        Initialize PerformanceMonitor

        Args:
            slow_threshold: seconds after which a section is reported as slow
        """
        self.metrics_cache: Dict[str, List[Dict[str, Any]]] = {}
        self.thresholds = {'section_slow': slow_threshold}

    @contextmanager
    def track(self, name: str):
        start_time = time.perf_counter()
        error = None
        try:
            yield
        except Exception as e:
            error = str(e)
            raise
        finally:
            duration = time.perf_counter() - start_time
            self._record_metric(name, duration, error)
            if duration > self.thresholds['section_slow']:
                logger.warning(f"Slow section detected: {name} took {duration:.1f}s")
            else:
                logger.debug(f"{name} finished in {duration:.3f}s")

    def _record_metric(self, name: str, duration: float, error: Optional[str] = None):
        entries = self.metrics_cache.setdefault(name, [])
        entries.append({'duration': duration, 'error': error})

        # Keep only last 1000 metrics per key
        if len(entries) > 1000:
            self.metrics_cache[name] = entries[-1000:]

    def get_stats(self, name: str) -> Dict[str, Any]:
        """Count, total, mean and max duration of a tracked section"""
        entries = self.metrics_cache.get(name, [])
        if not entries:
            return {'count': 0, 'total': 0.0, 'mean': 0.0, 'max': 0.0, 'errors': 0}
        durations = [e['duration'] for e in entries]
        return {
            'count': len(durations),
            'total': sum(durations),
            'mean': sum(durations) / len(durations),
            'max': max(durations),
            'errors': sum(1 for e in entries if e['error']),
        }


# ==================== HEALTH CHECK ====================

class HealthCheck:
    """Process and machine information via psutil"""

    def __init__(self):
        self.process = psutil.Process()

    def check_memory(self) -> Dict[str, Any]:
        """
        Check memory usage

        Returns:
            Dictionary with memory statistics
        """
        memory_info = self.process.memory_info()
        memory_percent = self.process.memory_percent()

        status = 'healthy'
        if memory_percent > 80:
            status = 'critical'
        elif memory_percent > 60:
            status = 'warning'

        return {
            'rss_mb': round(memory_info.rss / 1024 / 1024, 2),
            'percent': round(memory_percent, 2),
            'status': status
        }

    @safe_execute(default_return=None)
    def _cpu_frequency(self) -> Optional[float]:
        freq = psutil.cpu_freq()
        return round(freq.max or freq.current, 1) if freq else None

    def hardware_descriptor(self) -> Dict[str, Any]:
        """
        Describe the machine a benchmark ran on

        Returns:
            Dictionary with CPU, memory and library versions
        """
        return {
            'cpu': platform.processor() or platform.machine(),
            'physical_cores': psutil.cpu_count(logical=False),
            'logical_cores': psutil.cpu_count(logical=True),
            'cpu_freq_mhz': self._cpu_frequency(),
            'memory_gb': round(psutil.virtual_memory().total / 1024 ** 3, 2),
            'platform': platform.platform(),
            'python': platform.python_version(),
            'numpy': np.__version__,
            'scipy': scipy.__version__,
        }


# Global instances
performance_monitor = PerformanceMonitor()
health_check = HealthCheck()


# ==================== HELPER FUNCTIONS ====================

def get_run_report(*sections: str) -> Dict[str, Any]:
    """
    Timing of the given sections and current process memory, logged at INFO

    Args:
        sections: names passed to performance_monitor.track()

    Returns:
        Dictionary with per-section stats, memory and an overall status
    """
    stats = {name: performance_monitor.get_stats(name) for name in sections}
    memory = health_check.check_memory()
    failed = any(s['errors'] for s in stats.values())
    if memory['status'] == 'critical' or failed:
        overall_status = 'unhealthy'
    elif memory['status'] == 'warning':
        overall_status = 'degraded'
    else:
        overall_status = 'healthy'

    for name, s in stats.items():
        logger.info(f"{name}: {s['count']} run(s), {s['total']:.2f}s total, {s['max']:.2f}s max")
    log = logger.warning if overall_status != 'healthy' else logger.info
    log(f"Memory {memory['rss_mb']} MB ({memory['percent']}%), status {overall_status}")
    return {'sections': stats, 'memory': memory, 'overall_status': overall_status}
