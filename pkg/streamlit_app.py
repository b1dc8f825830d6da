import streamlit as st

st.set_page_config(layout="wide", page_title="Inexact Sketch-and-Project Traces")

# Define pages
pages = [
    st.Page("pages/home.py", title="Home", icon="🏠", default=True),
    st.Page("pages/trace_explorer.py", title="Trace Explorer", icon="📉"),
]

# Top bar navigation
pg = st.navigation(pages, position="top")
pg.run()
