"""Altair charts for trace CSV summaries."""

import altair as alt
import pandas as pd


def create_convergence_chart(
    df: pd.DataFrame,
    x_column: str,
    x_label: str,
    title: str,
    series_column: str | None = None,
) -> alt.Chart:
    """
    Create a log-scale line chart of mean relative error.

    Args:
        df: DataFrame from utils.db.mean_error_by_k (optionally with a series column)
        x_column: "k" or "mean_elapsed_s"
        x_label: Label for the x-axis
        title: Chart title
        series_column: Column distinguishing several runs on one chart

    Returns:
        Altair Chart object
    """
    # Zeros cannot be drawn on a log axis
    plotted = df[df["mean_rel_error"] > 0]

    encoding = {
        "x": alt.X(f"{x_column}:Q", title=x_label),
        "y": alt.Y(
            "mean_rel_error:Q",
            title="Mean relative error",
            scale=alt.Scale(type="log"),
            axis=alt.Axis(format=".0e"),
        ),
        "tooltip": [
            alt.Tooltip("k:Q", title="Iteration"),
            alt.Tooltip("mean_rel_error:Q", title="Mean rel. error", format=".3e"),
            alt.Tooltip("stderr:Q", title="Std. error", format=".1e"),
            alt.Tooltip("mean_elapsed_s:Q", title="Elapsed (s)", format=".4f"),
            alt.Tooltip("trials:Q", title="Trials"),
        ],
    }
    if series_column is not None:
        encoding["color"] = alt.Color(f"{series_column}:N", title=None)
        encoding["tooltip"].insert(0, alt.Tooltip(f"{series_column}:N", title="Run"))

    mark = {"color": "#1f77b4"} if series_column is None else {}
    chart = alt.Chart(plotted).mark_line(**mark).encode(**encoding)
    return chart.properties(
        title=title,
        width="container",
        height=320,
    ).configure_axis(
        labelFontSize=11,
        titleFontSize=12,
    ).configure_title(
        fontSize=14,
        anchor="start",
    )


def create_iterations_chart(df: pd.DataFrame) -> alt.Chart:
    """Bar chart of iterations per trial, from utils.db.trial_summary."""
    chart = alt.Chart(df).mark_bar().encode(
        x=alt.X("trial:O", title="Trial", axis=alt.Axis(labelAngle=0)),
        y=alt.Y("iterations:Q", title="Iterations"),
        tooltip=[
            alt.Tooltip("trial:O", title="Trial"),
            alt.Tooltip("iterations:Q", title="Iterations"),
            alt.Tooltip("final_rel_error:Q", title="Final rel. error", format=".3e"),
            alt.Tooltip("wall_clock_s:Q", title="Wall clock (s)", format=".4f"),
        ],
    )
    return chart.properties(title="Iterations per trial", width="container", height=250)
