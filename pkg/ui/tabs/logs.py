import streamlit as st


def render_logs_tab(ss, run=None):
    st.subheader("📋 Run details")

    if run is not None:
        col1, col2 = st.columns(2)
        with col1:
            st.metric("Kind", run["kind"])
            st.metric("Method", run["method"] or "-")
        with col2:
            st.metric("Arrays", len(run["arrays"]))
        st.code("\n".join(run["arrays"]))
        if run["provenance"]:
            st.json(run["provenance"])

    st.divider()
    st.subheader("Viewer log")
    logs = ss.get("logs", [])
    if logs:
        for log in reversed(logs[-10:]):
            if log.startswith("ERROR"):
                st.error(log)
            else:
                st.info(log)
    else:
        st.info("Nothing logged yet")

    if st.button("🗑️ Clear log"):
        ss['logs'] = []
        st.success("Log cleared")
