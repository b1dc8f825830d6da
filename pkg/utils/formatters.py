"""Shared formatting helper functions for display values."""

import pandas as pd


def format_error(value, digits=3) -> str:
    """Format an error or tolerance in scientific notation."""
    if value is None or pd.isna(value):
        return "N/A"
    try:
        return f"{value:.{digits}e}"
    except (ValueError, TypeError):
        return "N/A"


def format_rate(value, decimals=6) -> str:
    """Format a contraction factor such as rho or theta."""
    if value is None or pd.isna(value):
        return "N/A"
    try:
        return f"{value:.{decimals}f}"
    except (ValueError, TypeError):
        return "N/A"


def format_seconds(value) -> str:
    """Format a duration, switching to milliseconds below one second."""
    if value is None or pd.isna(value):
        return "N/A"
    try:
        if value < 1:
            return f"{value * 1000:,.1f} ms"
        return f"{value:,.2f} s"
    except (ValueError, TypeError):
        return "N/A"


def format_number(value, decimals=0) -> str:
    """Format a numeric value with commas."""
    if value is None or pd.isna(value):
        return "N/A"
    try:
        if decimals == 0:
            return f"{value:,.0f}"
        else:
            return f"{value:,.{decimals}f}"
    except (ValueError, TypeError):
        return "N/A"


def format_verdict(validation: dict | None) -> str:
    """Format a certificate validation record from the summary file."""
    if not validation:
        return "not requested"
    verdict = validation.get("verdict", "N/A")
    if verdict == "FAIL" and validation.get("first_violation_k") is not None:
        return f"FAIL at k = {validation['first_violation_k']} ({validation.get('bound_kind', '?')})"
    return f"{verdict} ({validation.get('bound_kind', '?')})"
