"""
Tests for timing/health monitoring and figure rendering
"""
import sys

import numpy as np
import pytest

from utils.harness import ConstellationPoint, constellation_projection
from utils.monitoring import (
    HealthCheck,
    PerformanceMonitor,
    get_run_report,
    performance_monitor,
    safe_execute,
    timed,
)
from utils.plotting import COLORS, render_ber_curve, render_constellation, save_png

PNG_MAGIC = b'\x89PNG\r\n\x1a\n'


def test_performance_monitor_records_sections():
    monitor = PerformanceMonitor()
    with monitor.track('decode'):
        pass
    with pytest.raises(RuntimeError):
        with monitor.track('decode'):
            raise RuntimeError('boom')
    stats = monitor.get_stats('decode')
    assert stats['count'] == 2
    assert stats['errors'] == 1
    assert monitor.get_stats('never')['count'] == 0


def test_slow_sections_are_reported():
    monitor = PerformanceMonitor(slow_threshold=0.0)
    with monitor.track('slow'):
        sum(range(1000))
    assert monitor.get_stats('slow')['max'] >= 0.0


def test_safe_execute_returns_default():
    @safe_execute(default_return='fallback')
    def broken():
        raise OSError('disk full')
    assert broken() == 'fallback'


def test_timed_keeps_result():
    @timed
    def add(a, b):
        return a + b
    assert add(2, 3) == 5


def test_hardware_descriptor_fields():
    health = HealthCheck()
    descriptor = health.hardware_descriptor()
    assert {'cpu', 'logical_cores', 'memory_gb', 'python', 'numpy', 'scipy'} <= set(descriptor)
    assert descriptor['logical_cores'] >= 1
    assert health.check_memory()['status'] in ('healthy', 'warning', 'critical')


def test_run_report_collects_sections_and_memory():
    with performance_monitor.track('report section'):
        pass
    report = get_run_report('report section', 'absent section')
    assert report['sections']['report section']['count'] >= 1
    assert report['sections']['absent section']['count'] == 0
    assert report['memory']['rss_mb'] > 0
    assert report['overall_status'] in ('healthy', 'degraded', 'unhealthy')


def test_figures_are_png(tmp_path):
    points = [ConstellationPoint('superposition', '0-0', 0.5, -0.5),
              ConstellationPoint('received', '0', 0.4, -0.6)]
    assert render_constellation(points, 'Resource 0').getvalue().startswith(PNG_MAGIC)

    curve = render_ber_curve([0.0, 2.0, 4.0], [1e-1, 1e-2, 0.0], 'logmpa:5')
    target = tmp_path / 'ber.png'
    assert save_png(curve, str(target)) is True
    assert target.read_bytes().startswith(PNG_MAGIC)


def test_palette_has_one_distinct_color_per_point_kind(canonical_codebook):
    kinds = {p.kind for p in constellation_projection(canonical_codebook, 0, include_codewords=True,
                                                      received=np.zeros((1, 8)))}
    assert kinds == set(COLORS)
    assert len(set(COLORS.values())) == len(COLORS)


def test_save_png_failure_is_contained(tmp_path):
    curve = render_ber_curve([0.0], [0.1], 'map')
    assert save_png(curve, str(tmp_path / 'missing' / 'ber.png')) is False


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
