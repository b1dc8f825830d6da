"""DuckDB queries over trace CSV files."""

from pathlib import Path

import duckdb
import pandas as pd


def get_duckdb_connection() -> duckdb.DuckDBPyConnection:
    """
    Open an in-memory DuckDB connection.

    Trace files are queried in place with read_csv, so nothing is loaded
    into the database itself.
    """
    return duckdb.connect()


def _source(trace_csv) -> str:
    path = str(trace_csv).replace("'", "''")
    return f"read_csv('{path}', header = true)"


def trial_summary(conn, trace_csv) -> pd.DataFrame:
    """
    One row per trial: iterations taken, final relative error and wall-clock total.

    Args:
        conn: DuckDB connection
        trace_csv: Path to a trace CSV written by the runner

    Returns:
        DataFrame with columns trial, iterations, final_rel_error, wall_clock_s
    """
    query = f"""
    SELECT
        trial,
        MAX(k) AS iterations,
        ARG_MAX(rel_error, k) AS final_rel_error,
        SUM(wall_clock_s) AS wall_clock_s
    FROM {_source(trace_csv)}
    GROUP BY trial
    ORDER BY trial
    """
    return conn.execute(query).df()


def iteration_stats(conn, trace_csv) -> dict:
    """Mean and median iterations across trials plus total wall-clock seconds."""
    query = f"""
    WITH per_trial AS (
        SELECT trial, MAX(k) AS iterations, SUM(wall_clock_s) AS wall_clock_s
        FROM {_source(trace_csv)}
        GROUP BY trial
    )
    SELECT
        AVG(iterations) AS mean_iterations,
        MEDIAN(iterations) AS median_iterations,
        SUM(wall_clock_s) AS total_wall_clock_s
    FROM per_trial
    """
    mean_iterations, median_iterations, total_wall_clock_s = conn.execute(query).fetchone()
    return {
        "mean_iterations": float(mean_iterations),
        "median_iterations": float(median_iterations),
        "total_wall_clock_s": float(total_wall_clock_s),
    }


def mean_error_by_k(conn, trace_csv) -> pd.DataFrame:
    """
    Mean relative error and mean elapsed time at each iteration, over the
    trials that reached that iteration.
    """
    query = f"""
    WITH timed AS (
        SELECT
            k,
            rel_error,
            SUM(wall_clock_s) OVER (PARTITION BY trial ORDER BY k) AS elapsed_s
        FROM {_source(trace_csv)}
    )
    SELECT
        k,
        AVG(rel_error) AS mean_rel_error,
        COALESCE(STDDEV_SAMP(rel_error) / SQRT(COUNT(*)), 0) AS stderr,
        AVG(elapsed_s) AS mean_elapsed_s,
        COUNT(*) AS trials
    FROM timed
    GROUP BY k
    ORDER BY k
    """
    return conn.execute(query).df()


def list_traces(output_dir) -> list[Path]:
    """Trace CSV files in an output directory, newest first."""
    directory = Path(output_dir)
    if not directory.is_dir():
        return []
    return sorted(directory.glob("*_trace.csv"), key=lambda p: p.stat().st_mtime, reverse=True)
