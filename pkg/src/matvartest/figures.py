"""Figure rendering for experiment reports.

Each report kind maps to one PNG summarizing the aggregates (and, for
estimator-error reports, the per-replication spread). Files land next
to the delimited records so a report directory is self-contained. The
Agg backend is forced at import: rendering must work headless.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

from .simharness import ExperimentReport


def render_report(report: ExperimentReport, outdir, stem: str = "report") -> list[str]:
    """Write the figure(s) for `report` into `outdir`.

    Returns the list of file paths written.
    """
    import matplotlib.pyplot as plt

    os.makedirs(outdir, exist_ok=True)
    kind = report.config.kind
    agg = report.aggregates
    alpha = report.config.alpha
    paths = []

    if kind == "size":
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ax.bar(["rejection rate"], [agg["rejection_rate"]], width=0.45,
               color="#4878a8")
        ax.axhline(alpha, color="#b04848", linestyle="--",
                   label=f"nominal level {alpha:g}")
        ax.set_ylim(0, max(2 * alpha, agg["rejection_rate"] * 1.3, 0.01))
        ax.set_ylabel("null rejection rate")
        ax.set_title(f"size, n={report.config.n}, p={report.config.p}, "
                     f"{agg['reps']} reps")
        ax.legend(frameon=False)
        path = os.path.join(outdir, f"{stem}_size.png")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)

    elif kind == "power":
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        if "by_kappa" in agg:
            ks = [row["kappa"] for row in agg["by_kappa"]]
            rates = [row["rejection_rate"] for row in agg["by_kappa"]]
            ax.plot(ks, rates, marker="o", color="#4878a8")
            ax.set_xlabel("signal multiplier kappa")
        else:
            ax.bar(["power"], [agg["rejection_rate"]], width=0.45,
                   color="#4878a8")
        ax.axhline(alpha, color="#b04848", linestyle="--",
                   label=f"nominal level {alpha:g}")
        ax.set_ylim(-0.02, 1.05)
        ax.set_ylabel("rejection rate")
        ax.set_title(f"power, n={report.config.n}, p={report.config.p}")
        ax.legend(frameon=False, loc="lower right")
        path = os.path.join(outdir, f"{stem}_power.png")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)

    elif kind == "mtc":
        rows = agg["methods"]
        names = [r["method"] for r in rows]
        fdp = [r["mean_fdp"] for r in rows]
        pw = [r["mean_power"] for r in rows]
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.4))
        xs = range(len(names))
        ax1.bar(xs, fdp, color="#4878a8")
        ax1.axhline(alpha, color="#b04848", linestyle="--",
                    label=f"target {alpha:g}")
        ax1.set_ylabel("mean FDP")
        ax1.legend(frameon=False)
        ax2.bar(xs, pw, color="#6aa06a")
        ax2.set_ylabel("mean power")
        ax2.set_ylim(0, 1.05)
        for ax in (ax1, ax2):
            ax.set_xticks(list(xs))
            ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
        fig.suptitle(f"multiple testing, n={report.config.n}, "
                     f"p={report.config.p}, {report.config.reps} reps",
                     fontsize=10)
        path = os.path.join(outdir, f"{stem}_mtc.png")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)

    else:  # quadfunc-error
        ea = [r["err_adaptive"] for r in report.records]
        ei = [r["err_iid"] for r in report.records]
        fig, ax = plt.subplots(figsize=(4.8, 3.4))
        ax.boxplot([ea, ei], showfliers=True)
        ax.set_xticks([1, 2])
        ax.set_xticklabels(["adaptive", "iid threshold"])
        ax.set_ylabel("relative error of the squared-norm estimate")
        ax.set_title(f"estimator error, n={report.config.n}, "
                     f"p={report.config.p}, {report.config.reps} reps")
        path = os.path.join(outdir, f"{stem}_error.png")
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
        paths.append(path)

    return paths
