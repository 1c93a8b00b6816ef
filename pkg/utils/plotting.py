"""Constellation and BER curve rendering"""
import io
from typing import Sequence

import matplotlib
matplotlib.use('Agg')  # Use non-interactive backend
import matplotlib.pyplot as plt

from utils.logger import setup_logger
from utils.monitoring import safe_execute

logger = setup_logger(__name__)

COLORS = {
    'superposition': '#1F77B4',
    'codeword': '#D62728',
    'received': '#7F7F7F',
}


def render_constellation(points: Sequence, title: str) -> io.BytesIO:
    """
    Scatter plot of constellation points

    Args:
        points: ConstellationPoint-like objects with kind, label, re, im
        title: figure title

    Returns:
        BytesIO object containing the PNG image
    """
    fig, ax = plt.subplots(figsize=(6, 6), dpi=100)

    # received samples go underneath the ideal points
    for kind in ('received', 'codeword', 'superposition'):
        selected = [p for p in points if p.kind == kind]
        if not selected:
            continue
        ax.scatter([p.re for p in selected], [p.im for p in selected],
                   s=4 if kind == 'received' else 24, alpha=0.3 if kind == 'received' else 0.9,
                   color=COLORS[kind], label=f'{kind} ({len(selected)})')

    ax.set_xlabel('In-phase')
    ax.set_ylabel('Quadrature')
    ax.set_title(title, fontsize=12, fontweight='bold')
    ax.axhline(0, color='#CCCCCC', linewidth=0.5)
    ax.axvline(0, color='#CCCCCC', linewidth=0.5)
    ax.set_aspect('equal', adjustable='datalim')
    ax.grid(True, alpha=0.2)
    if points:
        ax.legend(loc='upper right')

    buf = io.BytesIO()
    plt.tight_layout()
    plt.savefig(buf, format='png')
    buf.seek(0)
    plt.close(fig)
    return buf


def render_ber_curve(ebn0_db: Sequence[float], ber: Sequence[float], label: str) -> io.BytesIO:
    """Semilog BER against Eb/N0; zero-error points are left out"""
    fig, ax = plt.subplots(figsize=(7, 5), dpi=100)
    shown = [(e, b) for e, b in zip(ebn0_db, ber) if b > 0]
    if shown:
        ax.semilogy([e for e, _ in shown], [b for _, b in shown], marker='o', linewidth=2, label=label)
        ax.legend(loc='lower left')
    ax.set_xlabel('Eb/N0 (dB)')
    ax.set_ylabel('BER')
    ax.grid(True, which='both', alpha=0.3)

    buf = io.BytesIO()
    plt.tight_layout()
    plt.savefig(buf, format='png')
    buf.seek(0)
    plt.close(fig)
    return buf


@safe_execute(default_return=False)
def save_png(buf: io.BytesIO, path: str) -> bool:
    with open(path, 'wb') as f:
        f.write(buf.getvalue())
    logger.info(f"Wrote {path}")
    return True
