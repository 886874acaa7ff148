import os

import streamlit as st

from ui.utils.viewer_utils import discover_runs

RUNS_DIR = os.getenv("PTYINR_RUNS_DIR", "runs")


def render_sidebar_controls():
    """
    Renders the main sidebar controls:
    - Runs folder
    - Run selector (reconstructions and datasets)
    - Optional reference run for side-by-side views
    """
    st.sidebar.header("Control Panel")

    root = st.sidebar.text_input("Runs folder", value=RUNS_DIR, key="runs_root")
    runs = discover_runs(root)
    if not runs:
        st.sidebar.warning(f"No containers found under {root}")
        return root, None, None

    names = [r["name"] for r in runs]
    by_name = {r["name"]: r for r in runs}
    selected = st.sidebar.selectbox(
        "Run", names, format_func=lambda n: f"{n} ({by_name[n]['method'] or by_name[n]['kind']})", key="run"
    )
    reference = st.sidebar.selectbox("Compare with", ["(none)"] + names, key="reference")

    st.sidebar.markdown("---")
    return root, by_name[selected], by_name.get(reference)
