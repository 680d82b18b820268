"""Static figures rendered from run results."""

import os

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _median_curves(results):
    curves = {}
    for r in results:
        if r.failed or not r.rows:
            continue
        key = (r.spec.algo, r.spec.bw, r.spec.ueps_mode, r.spec.delta_e, r.spec.delta_c_amp)
        curves.setdefault(key, []).append(np.array([(row[0], row[2]) for row in r.rows]))
    out = {}
    for key, runs in curves.items():
        n = min(len(c) for c in runs)
        t = runs[0][:n, 0]
        out[key] = (t, np.median(np.stack([c[:n, 1] for c in runs]), axis=0))
    return out


def _label(key):
    algo, bw, mode, de, dc = key
    parts = [algo]
    if bw:
        parts.append(f"{bw}/{mode}")
    parts.append(f"de={de:+g}")
    if dc:
        parts.append(f"dc={dc:g}")
    return ' '.join(parts)


def plot_rel_error(results, path):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key, (t, y) in sorted(_median_curves(results).items()):
        y = np.where(np.isfinite(y) & (y > 0), y, np.nan)
        if np.all(np.isnan(y)):
            continue
        ax.semilogy(t, y, label=_label(key))
    ax.set_xlabel('iteration')
    ax.set_ylabel('median relative cost error')
    ax.grid(True, which='both', alpha=0.3)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_trace(k, values, ylabel, title, path):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(k, values, linewidth=0.8)
    ax.set_xlabel('step')
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


_TRACE_LABELS = {
    'temperature': 'temperature offset',
    'heat_generation': 'heat generation',
    'optimality_error': 'optimality error',
}


def render_all(results, fig_dir):
    """Write all figures for ``results`` into ``fig_dir``; returns the paths."""
    os.makedirs(fig_dir, exist_ok=True)
    paths = []
    path = os.path.join(fig_dir, 'rel_error.png')
    plot_rel_error(results, path)
    paths.append(path)
    for r in results:
        if not r.traces:
            continue
        tag = f"{r.spec.algo}_de{r.spec.delta_e:+.4f}_dc{r.spec.delta_c_amp:.4f}_s{r.spec.seed}"
        for name, ylabel in _TRACE_LABELS.items():
            path = os.path.join(fig_dir, f"{name}_{tag}.png")
            plot_trace(r.traces['k'], r.traces[name], ylabel, f"{ylabel} ({r.spec.algo})", path)
            paths.append(path)
    return paths
