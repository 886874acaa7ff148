import os

import pandas as pd
import plotly.graph_objects as go
import streamlit as st

from ui.utils.viewer_utils import find_reports, parse_report


def render_metrics_tab(root):
    """Evaluation reports found under the runs folder, with FRC curves where a table exists."""
    st.subheader("📊 Metrics")
    reports = find_reports(root)
    if not reports:
        st.info("No reports yet. Run `ptyinr evaluate` with --report inside the runs folder.")
        return

    rows = []
    for path in reports:
        with open(path) as f:
            report = parse_report(f.read())
        if report:
            rows.append({"report": os.path.relpath(path, root), **report})
    if rows:
        table = pd.DataFrame(rows).set_index("report")
        st.dataframe(table, use_container_width=True)

    curves = [p for p in reports if os.path.isfile(f"{p}.frc.csv")]
    if not curves:
        return
    selected = st.selectbox("FRC curve", curves, format_func=lambda p: os.path.relpath(p, root))
    curve = pd.read_csv(f"{selected}.frc.csv")
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=curve["ring_frequency"], y=curve["correlation"], mode="lines+markers", name="FRC"))
    fig.add_trace(go.Scatter(x=curve["ring_frequency"], y=curve["threshold"], mode="lines",
                             name="half-bit", line=dict(dash="dash")))
    fig.update_layout(xaxis_title="spatial frequency (fraction of Nyquist)", yaxis_title="correlation", height=420)
    st.plotly_chart(fig, use_container_width=True)
