import logging
from pathlib import Path
from typing import Optional, Sequence, Tuple

import matplotlib
# Указываем, что у нас нет дисплея. Это обязательно для сервера.
matplotlib.use('Agg')
# Use Figure directly to avoid global state from pyplot
from matplotlib.figure import Figure
from matplotlib.backends.backend_agg import FigureCanvasAgg
import numpy as np

from src.services.dynamics import JacobiTrajectory
from src.services.entropy import VolumeSeries

logger = logging.getLogger(__name__)

# Fixed salt so element ids in the SVG do not change between runs.
matplotlib.rcParams['svg.hashsalt'] = 'infogeo-chaos'

# Main line: RGB(0, 112, 59) -> #00703B
# Background: RGB(250, 250, 241) -> #FAFAF1
# Grid: RGB(227, 230, 161) -> #E3E6A1
C_LINE = '#00703B'
C_REFERENCE = '#B0413E'
C_BG = '#FAFAF1'
C_GRID = '#E3E6A1'

# 800x600 viewport
FIG_SIZE = (8, 6)
DPI = 100

Series = Tuple[np.ndarray, np.ndarray, str, str]


def _line_chart(path: Path, title: str, xlabel: str, ylabel: str, series: Sequence[Series]) -> Optional[Path]:
    """
    Writes a minimalist SVG line chart. Each series is (x, y, label, linestyle);
    the first one is drawn in the main colour, the rest as references.
    """
    try:
        fig = Figure(figsize=FIG_SIZE, dpi=DPI)
        # Attach a canvas to the figure (required for saving)
        FigureCanvasAgg(fig)
        ax = fig.add_subplot(111)

        fig.patch.set_facecolor(C_BG)
        ax.set_facecolor(C_BG)

        for i, (x, y, label, style) in enumerate(series):
            color = C_LINE if i == 0 else C_REFERENCE
            width = 2 if i == 0 else 1
            ax.plot(x, y, color=color, linewidth=width, linestyle=style, label=label)

        # Minimalist style: remove top/right spines
        ax.spines['top'].set_visible(False)
        ax.spines['right'].set_visible(False)
        ax.spines['left'].set_visible(False)
        ax.spines['bottom'].set_color(C_GRID)

        ax.grid(True, color=C_GRID, linestyle='--', linewidth=0.5)
        ax.set_axisbelow(True)

        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(title, color='#333333', fontweight='bold')
        if len(series) > 1:
            ax.legend(frameon=False)

        # Fixed figure size, so fixed margins instead of bbox_inches='tight'.
        fig.subplots_adjust(left=0.12, right=0.95, top=0.9, bottom=0.12)

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format='svg', facecolor=C_BG, metadata={'Date': None})
        return path

    except Exception as e:
        logger.error(f"Error generating chart {path}: {e}")
        return None


def entropy_chart(series: VolumeSeries, n: int, lambda_rate: float, path: Path) -> Optional[Path]:
    """S(tau) next to the linear law 3 N lambda tau."""
    tau = series.tau_grid
    return _line_chart(
        path,
        title=f"Information-geometric entropy (N={n}, λ={lambda_rate:g})",
        xlabel="τ",
        ylabel="S",
        series=[
            (tau, series.entropy, "S(τ)", '-'),
            (tau, 3 * n * lambda_rate * tau, "3Nλτ", '--'),
        ],
    )


def jacobi_chart(trajectory: JacobiTrajectory, lambda_rate: float, path: Path) -> Optional[Path]:
    """log |J| against tau, with a slope-lambda reference through the first positive sample."""
    tau = trajectory.tau_grid
    mask = trajectory.intensities > 0
    if not np.any(mask):
        logger.warning(f"Jacobi field vanishes identically, skipping chart {path}")
        return None
    log_j = np.log(trajectory.intensities[mask])
    reference = log_j[0] + lambda_rate * (tau[mask] - tau[mask][0])
    return _line_chart(
        path,
        title=f"Jacobi field intensity (λ={lambda_rate:g})",
        xlabel="τ",
        ylabel="log ‖J‖",
        series=[
            (tau[mask], log_j, "log ‖J‖", '-'),
            (tau[mask], reference, "slope λ", '--'),
        ],
    )
