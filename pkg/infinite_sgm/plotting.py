import logging

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)


def plot_samples(samples, path, n_show=10, title=None):
    """
    Plot the first n_show functions of a batch against the grid points.

    Args:
        :samples (GridFunction): Batch of functions
        :path (str): Output image file
        :n_show (int, default=10): Number of functions drawn
        :title (str, default=None): Figure title
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    t = samples.grid.points
    for row in np.atleast_2d(samples.values)[:n_show]:
        ax.plot(t, row, lw=0.8)
    ax.set_xlabel('t')
    ax.set_ylabel('x(t)')
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    logger.info("saved sample figure to %s", path)


def plot_qv_histograms(qv_by_label, path, bins=40):
    """
    Overlay histograms of quadratic variation, one per label.

    Args:
        :qv_by_label (dict): Label to array of QV values
        :path (str): Output image file
        :bins (int, default=40): Number of histogram bins
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    values = [np.asarray(v) for v in qv_by_label.values() if len(v)]
    if values:
        edges = np.histogram_bin_edges(np.concatenate(values), bins=bins)
        for label, qv in qv_by_label.items():
            if len(qv):
                ax.hist(qv, bins=edges, density=True, histtype='step', label=label)
        ax.legend()
    ax.set_xlabel('quadratic variation')
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    logger.info("saved QV histogram to %s", path)
