import os

import numpy as np
import plotly.graph_objects as go
import streamlit as st

from ptyinr.container import load_container
from ptyinr.errors import ContainerError

# array name in a reconstruction, array name in a dataset
_FIELDS = {"object": ("object", "object_truth"), "probe": ("probe", "probe_truth")}


def _pick(arrays, which):
    for name in _FIELDS[which]:
        if name in arrays:
            return name
    return None


def _heatmap(values, title, zmin=None, zmax=None, colorscale="Gray"):
    fig = go.Figure(go.Heatmap(z=values, zmin=zmin, zmax=zmax, colorscale=colorscale))
    fig.update_layout(title=title, height=420, margin=dict(l=10, r=10, t=40, b=10))
    fig.update_yaxes(autorange="reversed", scaleanchor="x")
    return fig


def render_fields_tab(run, which, reference=None):
    """Amplitude and phase of the object or probe, optionally next to a reference run."""
    st.subheader(f"{which.capitalize()} field")
    if run is None:
        st.info("Select a run in the sidebar")
        return

    columns = st.columns(2 if reference else 1)
    for col, entry in zip(columns, [run, reference]):
        with col:
            try:
                c = load_container(entry["path"])
            except ContainerError as e:
                st.error(str(e))
                continue
            name = _pick(c.arrays, which)
            if name is None:
                st.warning(f"{entry['name']} has no {which}")
                continue
            field = c.arrays[name]
            st.caption(f"{entry['name']} / {name} {field.shape}")
            st.plotly_chart(_heatmap(np.abs(field), "amplitude", zmin=0.0), use_container_width=True)
            st.plotly_chart(_heatmap(np.angle(field), "phase", -np.pi, np.pi, "Hot"), use_container_width=True)

            png = os.path.join(entry["path"], f"{name}_phase.png")
            if os.path.isfile(png):
                with st.expander("Saved PNG"):
                    st.image(png, use_container_width=True)
