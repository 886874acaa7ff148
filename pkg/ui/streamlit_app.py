import sys
import os

# Streamlit runs this file as a script, so the package root has to be importable.
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
if project_root not in sys.path:
    sys.path.insert(0, project_root)

import streamlit as st

from ui.controls import render_sidebar_controls
from ui.tabs.fields import render_fields_tab
from ui.tabs.logs import render_logs_tab
from ui.tabs.metrics import render_metrics_tab
from ui.tabs.training import render_training_tab

# --- Page Config ---
st.set_page_config(
    page_title="PtyINR run viewer",
    layout="wide",
    initial_sidebar_state="expanded"
)

# --- App State ---
ss = st.session_state
if 'logs' not in ss:
    ss.logs = []


def main():
    st.title("PtyINR run viewer")
    st.caption("Browse simulated datasets, reconstructions and evaluation reports written by the `ptyinr` CLI.")

    root, run, reference = render_sidebar_controls()
    if run is not None and ss.get("last_run") != run["name"]:
        ss.logs.append(f"Opened {run['name']}")
        ss.last_run = run["name"]

    tab_obj, tab_probe, tab_loss, tab_metrics, tab_logs = st.tabs(
        ["Object", "Probe", "Training", "Metrics", "Details"]
    )
    with tab_obj:
        render_fields_tab(run, "object", reference)
    with tab_probe:
        render_fields_tab(run, "probe", reference)
    with tab_loss:
        render_training_tab(run, reference)
    with tab_metrics:
        render_metrics_tab(root)
    with tab_logs:
        render_logs_tab(ss, run)


if __name__ == "__main__":
    main()
