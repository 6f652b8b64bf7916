"""Figures for sweep results, and standalone plotting scripts the CLI can emit."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
import seaborn as sns  # noqa: E402

from asynciqc.errors import PreconditionError  # noqa: E402
from asynciqc.tables import read_csv  # noqa: E402


def _strip_units(frame: pd.DataFrame) -> pd.DataFrame:
    return frame.rename(columns=lambda c: c.split(" [")[0])


def h_max_curve(frame: pd.DataFrame, out_path):
    """h_max against delta; one line per y_mode value if the column is present."""
    frame = _strip_units(frame)
    plt.figure(figsize=(8, 5))
    hue = "y_mode" if "y_mode" in frame.columns else None
    sns.lineplot(x="delta", y="h_max", hue=hue, data=frame, marker="o")
    plt.xlabel("delta")
    plt.ylabel("largest certified h")
    plt.title("Largest certified inter-sample bound")
    plt.tight_layout()
    plt.savefig(out_path)
    plt.close()


def gamma_surface(frame: pd.DataFrame, out_path):
    frame = _strip_units(frame)
    pivot = frame.pivot_table(index="delta", columns="h", values="gamma", aggfunc="min")
    plt.figure(figsize=(10, 6))
    sns.heatmap(pivot, annot=False, cmap="viridis")
    plt.title("Certified L2 gain bound over (h, delta)")
    plt.tight_layout()
    plt.savefig(out_path)
    plt.close()


def trace_plot(frame: pd.DataFrame, out_path):
    frame = _strip_units(frame)
    cols = [c for c in ("d", "z", "w", "held") if c in frame.columns]
    long = frame.melt(id_vars="time", value_vars=cols, var_name="signal")
    plt.figure(figsize=(10, 6))
    sns.lineplot(x="time", y="value", hue="signal", data=long, drawstyle="steps-post")
    plt.title("Loop signals")
    plt.tight_layout()
    plt.savefig(out_path)
    plt.close()


def lemma_plot(frame: pd.DataFrame, out_path):
    frame = _strip_units(frame)
    fig, axes = plt.subplots(1, 2, figsize=(12, 5))
    sns.histplot(frame["ratio"], ax=axes[0])
    axes[0].axvline(1.0, color="black", linestyle="--")
    axes[0].set_title("Gain ratio to the lemma bound")
    sns.histplot(frame["slack_normalized"], ax=axes[1])
    axes[1].axvline(0.0, color="black", linestyle="--")
    axes[1].set_title("Normalized passivity slack")
    plt.tight_layout()
    plt.savefig(out_path)
    plt.close(fig)


RENDERERS = {
    "h-max": h_max_curve,
    "gamma-surface": gamma_surface,
    "y-comparison": h_max_curve,
    "trace": trace_plot,
    "lemma": lemma_plot,
}


def render(kind: str, csv_path, out_path):
    if kind not in RENDERERS:
        raise PreconditionError(f"no renderer for '{kind}'")
    RENDERERS[kind](read_csv(csv_path), out_path)


_SCRIPT = '''import pandas as pd
import matplotlib.pyplot as plt
import seaborn as sns

df = pd.read_csv({csv!r}, comment="#")
df = df.rename(columns=lambda c: c.split(" [")[0])

{body}
plt.tight_layout()
plt.savefig({png!r})
plt.show()
'''

_BODIES = {
    "h-max": '''plt.figure(figsize=(8, 5))
sns.lineplot(x="delta", y="h_max", data=df, marker="o")
plt.xlabel("delta")
plt.ylabel("largest certified h")
plt.title("Largest certified inter-sample bound")''',
    "gamma-surface": '''plt.figure(figsize=(10, 6))
pivot = df.pivot_table(index="delta", columns="h", values="gamma", aggfunc="min")
sns.heatmap(pivot, cmap="viridis")
plt.title("Certified L2 gain bound over (h, delta)")''',
    "y-comparison": '''plt.figure(figsize=(8, 5))
sns.lineplot(x="delta", y="h_max", hue="y_mode", data=df, marker="o")
plt.title("Y free against Y = 0")''',
    "trace": '''plt.figure(figsize=(10, 6))
long = df.melt(id_vars="time", value_vars=[c for c in ("d", "z", "w", "held") if c in df], var_name="signal")
sns.lineplot(x="time", y="value", hue="signal", data=long, drawstyle="steps-post")
plt.title("Loop signals")''',
    "lemma": '''fig, axes = plt.subplots(1, 2, figsize=(12, 5))
sns.histplot(df["ratio"], ax=axes[0])
axes[0].axvline(1.0, color="black", linestyle="--")
sns.histplot(df["slack_normalized"], ax=axes[1])
axes[1].axvline(0.0, color="black", linestyle="--")''',
}


def write_plot_script(kind: str, csv_path, out_path) -> Path:
    """Write a standalone pandas/matplotlib/seaborn script plotting csv_path."""
    if kind not in _BODIES:
        raise PreconditionError(f"unknown plot kind '{kind}'")
    out_path = Path(out_path)
    png = str(out_path.with_suffix(".png").name)
    out_path.write_text(_SCRIPT.format(csv=Path(csv_path).name, body=_BODIES[kind], png=png))
    return out_path
