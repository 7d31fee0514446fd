import matplotlib
matplotlib.use('Agg')

import matplotlib.pyplot as plt
import seaborn as sns
import os
import logging

logger = logging.getLogger("Materializer.PlotUtils")

# Global plotting aesthetics
sns.set_theme(context='talk', style='whitegrid', palette='Set2')
plt.rcParams.update({
    'axes.titlesize': 16,
    'axes.labelsize': 14,
    'legend.fontsize': 11,
    'xtick.labelsize': 11,
    'ytick.labelsize': 11,
})

def save_plot(fig, save_dir, filename, dpi=150):
    """
    Saves a matplotlib figure to a specified directory.

    Args:
        fig (matplotlib.figure.Figure): The figure object to save.
        save_dir (str): The directory to save the plot in.
        filename (str): The name of the output file.
        dpi (int): The resolution of the saved image.
    """
    os.makedirs(save_dir, exist_ok=True)
    save_path = os.path.join(save_dir, filename)
    try:
        fig.savefig(save_path, dpi=dpi, bbox_inches='tight')
        logger.info(f"Plot saved to {save_path}")
    except Exception as e:
        logger.error(f"Failed to save plot {filename}: {e}")
    finally:
        plt.close(fig)
    return save_path

def _maybe_add_legend(ax, title=None):
    handles, labels = ax.get_legend_handles_labels()
    if labels:
        ax.legend(title=title, ncol=2, frameon=True)
    else:
        legend = ax.get_legend()
        if legend:
            legend.remove()


def plot_funnel_survival(df, save_dir, filename_prefix="funnel"):
    """
    Line plot of the share of raw candidates surviving each funnel stage, one line per hop.

    Expects long-form columns: hop, stage, survival_pct.
    """
    fig, ax = plt.subplots(figsize=(12, 7))

    sns.lineplot(
        data=df, x='stage', y='survival_pct', hue='hop',
        marker='o', linewidth=1.8, ax=ax, errorbar=None,
    )

    ax.set_title('Funnel Survival by Hop')
    ax.set_xlabel('Stage')
    ax.set_ylabel('Surviving candidates (% of raw)')
    ax.set_ylim(0, 105)
    ax.tick_params(axis='x', rotation=20)
    _maybe_add_legend(ax, title='Parent hop')

    fig.tight_layout()
    return save_plot(fig, save_dir, f'{filename_prefix}_survival_by_hop.png')


def plot_hop_distribution(df, save_dir, filename_prefix="corpus"):
    """
    Bar chart of subjects per hop, split by lifecycle status.
    """
    fig, ax = plt.subplots(figsize=(12, 7))

    sns.countplot(data=df, x='hop', hue='status', ax=ax)

    ax.set_title('Corpus Hop Distribution')
    ax.set_xlabel('Hop')
    ax.set_ylabel('Subjects')
    _maybe_add_legend(ax, title='Status')

    fig.tight_layout()
    return save_plot(fig, save_dir, f'{filename_prefix}_hop_distribution.png')


def plot_rejection_reasons(df, save_dir, filename_prefix="funnel"):
    """
    Horizontal bar chart of rejected candidates per reason.

    Expects columns: rejection_reason, count.
    """
    fig, ax = plt.subplots(figsize=(12, 7))

    sns.barplot(data=df, y='rejection_reason', x='count', ax=ax)

    ax.set_title('Rejected Candidates by Reason')
    ax.set_xlabel('Candidates')
    ax.set_ylabel('')

    fig.tight_layout()
    return save_plot(fig, save_dir, f'{filename_prefix}_rejections.png')


def plot_overlap_heatmap(matrix, save_dir, filename_prefix, title):
    """
    Annotated heatmap of a symmetric corpus-by-corpus overlap matrix in [0, 1].
    """
    size = max(6, 1.6 * len(matrix))
    fig, ax = plt.subplots(figsize=(size, size * 0.8))

    sns.heatmap(matrix, annot=True, fmt='.3f', vmin=0.0, vmax=1.0, cmap='viridis', square=True, ax=ax)

    ax.set_title(title)
    ax.tick_params(axis='x', rotation=30)
    ax.tick_params(axis='y', rotation=0)

    fig.tight_layout()
    return save_plot(fig, save_dir, f'{filename_prefix}_heatmap.png')
