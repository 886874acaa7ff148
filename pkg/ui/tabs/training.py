import plotly.graph_objects as go
import streamlit as st

from ui.utils.viewer_utils import decimate, load_loss_history


def render_training_tab(run, reference=None):
    st.subheader("📉 Loss history")
    if run is None:
        st.info("Select a run in the sidebar")
        return

    log_y = st.toggle("Log scale", value=True, key="loss_log")
    fig = go.Figure()
    for entry in (run, reference):
        if entry is None:
            continue
        history = load_loss_history(entry["path"])
        if history is None or history.empty:
            st.caption(f"{entry['name']}: no loss history")
            continue
        shown = decimate(history)
        fig.add_trace(go.Scatter(x=shown["step"], y=shown["loss"], mode="lines", name=entry["name"]))
        st.metric(f"{entry['name']} final loss", f"{history['loss'].iloc[-1]:.4e}")

    fig.update_layout(xaxis_title="step", yaxis_title="loss", height=450)
    if log_y:
        fig.update_yaxes(type="log")
    st.plotly_chart(fig, use_container_width=True)
