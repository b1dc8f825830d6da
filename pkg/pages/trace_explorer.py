import os
from pathlib import Path

import pandas as pd
import streamlit as st

from components.glossary_dialog import render_glossary_button
from components.trace_charts import create_convergence_chart, create_iterations_chart
from harness.config import OUTPUT_DIR_ENV
from harness.runner import SUMMARY_FILE
from utils.db import get_duckdb_connection, list_traces, mean_error_by_k, trial_summary
from utils.formatters import format_error, format_number, format_seconds, format_verdict

st.set_page_config(layout="wide")


@st.cache_resource
def get_connection():
    """One DuckDB connection shared across sessions."""
    return get_duckdb_connection()


@st.cache_data(ttl=60)
def load_mean_errors(trace_path: str, mtime: float) -> pd.DataFrame:
    return mean_error_by_k(get_connection(), trace_path)


@st.cache_data(ttl=60)
def load_trials(trace_path: str, mtime: float) -> pd.DataFrame:
    return trial_summary(get_connection(), trace_path)


@st.cache_data(ttl=60)
def load_summaries(summary_path: str, mtime: float) -> pd.DataFrame:
    """Summary records, newest last."""
    try:
        return pd.read_json(summary_path, lines=True)
    except ValueError as e:
        st.error(f"Error reading {summary_path}: {e}")
        return pd.DataFrame()


output_dir = Path(st.sidebar.text_input("Output directory", os.environ.get(OUTPUT_DIR_ENV, "runs")))
with st.sidebar:
    render_glossary_button()

traces = list_traces(output_dir)
if not traces:
    st.info(f"No trace files in `{output_dir}`. Run `inexact-sp run <config>` first.")
    st.stop()

selected = st.multiselect(
    "Trace files",
    options=traces,
    default=traces[:1],
    format_func=lambda p: p.name.removesuffix("_trace.csv"),
)
if not selected:
    st.stop()

frames = []
for path in selected:
    df = load_mean_errors(str(path), path.stat().st_mtime)
    df["run"] = path.name.removesuffix("_trace.csv")
    frames.append(df)
curves = pd.concat(frames, ignore_index=True)
series = "run" if len(selected) > 1 else None

st.markdown("#### Convergence")
by_k_col, by_time_col = st.columns(2)
with by_k_col:
    st.altair_chart(
        create_convergence_chart(curves, "k", "Iteration", "Relative error by iteration", series),
        width="stretch",
    )
with by_time_col:
    st.altair_chart(
        create_convergence_chart(curves, "mean_elapsed_s", "Elapsed time (s)", "Relative error by wall clock", series),
        width="stretch",
    )
    st.caption("Wall-clock times are environment-dependent.")

if len(selected) == 1:
    trials = load_trials(str(selected[0]), selected[0].stat().st_mtime)
    left_col, right_col = st.columns([0.3, 0.7])
    with left_col:
        st.markdown("#### Trials")
        st.dataframe(
            pd.DataFrame({
                "Metric": ["Trials", "Mean iterations", "Best final error", "Total wall clock"],
                "Value": [
                    format_number(len(trials)),
                    format_number(trials["iterations"].mean(), decimals=1),
                    format_error(trials["final_rel_error"].min()),
                    format_seconds(trials["wall_clock_s"].sum()),
                ],
            }),
            hide_index=True,
            width="stretch",
        )
    with right_col:
        if len(trials) > 1:
            st.altair_chart(create_iterations_chart(trials), width="stretch")

summary_path = output_dir / SUMMARY_FILE
if summary_path.exists():
    st.markdown("#### Run Summaries")
    summaries = load_summaries(str(summary_path), summary_path.stat().st_mtime)
    if not summaries.empty:
        table = pd.DataFrame({
            "Method": summaries["method"],
            "Trials": summaries["trials"],
            "Mean iterations": summaries["mean_iterations"].map(lambda v: format_number(v, decimals=1)),
            "Median iterations": summaries["median_iterations"].map(lambda v: format_number(v, decimals=1)),
            "Wall clock": summaries["total_wall_clock_s"].map(format_seconds),
            "Certificate": summaries["validation"].map(lambda v: format_verdict(v if isinstance(v, dict) else None)),
        })
        st.dataframe(table.iloc[::-1], hide_index=True, width="stretch")
