import streamlit as st

from components.glossary_dialog import render_glossary_button
from harness.config import OUTPUT_DIR_ENV

st.title("Inexact Sketch-and-Project Traces")

st.markdown("""
A viewer for the trace files written by `inexact-sp run` and `inexact-sp validate`.
Each run stores one CSV per experiment, with a row per trial and iteration,
and appends a summary record to `summary.jsonl` in the same directory.
""")

st.markdown("### Features")

col1, col2 = st.columns(2)

with col1:
    st.markdown("""
    **Trace Explorer**

    Pick one or more trace files and compare their mean relative error
    against the iteration count and against elapsed wall-clock time.
    """)

with col2:
    st.markdown("""
    **Run Summaries**

    See iterations to tolerance, terminations and certificate verdicts
    for every experiment written to the output directory.
    """)

st.markdown(f"""
---

Traces are read from the directory in `${OUTPUT_DIR_ENV}`, or `./runs` when it is unset.
Wall-clock columns depend on the machine the run was made on.
""")

_, glossary_col = st.columns([4, 1])
with glossary_col:
    render_glossary_button()
