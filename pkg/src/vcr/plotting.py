"""Figures rendered next to the CSV outputs (matplotlib, Agg backend).

The CSVs remain the source of truth; these PNGs are a convenience view.
"""

import numpy as np


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_trace(trace, path, annotations=None, max_steps=320, labels=None):
    """Per-step m_t with shaded flagged positions, plus mean m_t by flag class."""
    plt = _pyplot()
    n = min(len(trace), max_steps)
    fig, ax = plt.subplots(figsize=(10, 3.2))
    t = np.arange(n)
    ax.plot(t, trace.m[:n], lw=1.0, color="k", drawstyle="steps-mid")
    if annotations is not None:
        colors = ["tab:orange", "tab:blue", "tab:green", "tab:red"]
        for c, name in zip(colors, annotations.names):
            flag = np.asarray(annotations.flags[name][:n], dtype=bool)
            ax.fill_between(t, 0, 1, where=flag, step="mid", alpha=0.18, color=c, label=name)
        ax.legend(loc="upper right", fontsize=8)
    if labels is not None and n <= 120:
        ax.set_xticks(t)
        ax.set_xticklabels([labels[i] for i in trace.token[:n]], fontsize=6)
    ax.set_ylim(0, 1)
    ax.set_xlim(-0.5, n - 0.5)
    ax.set_xlabel("step")
    ax.set_ylabel("m_t")
    ax.set_title(f"{trace.unit_kind} D={trace.D}: scheduler output over the first {n} steps")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_metrics(rows, path):
    """Bits/token and mean m_t per epoch, with lambda on a twin axis."""
    plt = _pyplot()
    epochs = [r["epoch"] for r in rows]
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.2))
    a.plot(epochs, [r["train_bpt"] for r in rows], "o-", label="train")
    a.plot(epochs, [r["valid_bpt"] for r in rows], "s-", label="valid")
    a.set_xlabel("epoch")
    a.set_ylabel("bits/token")
    a.legend(fontsize=8)
    b.plot(epochs, [r["mean_m"] for r in rows], "o-", color="k", label="mean m")
    b.set_xlabel("epoch")
    b.set_ylabel("mean m_t")
    b.set_ylim(0, 1)
    lam = b.twinx()
    lam.plot(epochs, [r["lambda"] for r in rows], "--", color="tab:gray")
    lam.set_ylabel("lambda")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
