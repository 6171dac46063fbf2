"""Training-curve figures written next to the metrics records."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 120,
}


def plot_training_curves(runs, path, title=None):
    """Plot train loss and validation accuracy per epoch.

    ``runs`` maps a legend label to a :class:`~hopformer.training.Metrics`.
    The best-validation epoch of each run is marked on the accuracy panel.
    """
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(7.0, 2.8))
        for label, m in runs.items():
            ep = [r.epoch for r in m.epochs]
            line, = ax_loss.plot(ep, [r.train_loss for r in m.epochs], label=label)
            ax_acc.plot(ep, [r.val_acc for r in m.epochs], color=line.get_color(), label=label)
            ax_acc.plot([m.best_epoch], [m.best_val_acc], "o", color=line.get_color(), ms=4)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("train loss")
        ax_acc.set_xlabel("epoch")
        ax_acc.set_ylabel("val accuracy")
        ax_acc.set_ylim(0, 1.02)
        if len(runs) > 1:
            ax_acc.legend(frameon=False, loc="lower right")
        if title:
            fig.suptitle(title)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
