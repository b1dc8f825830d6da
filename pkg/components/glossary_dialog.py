"""Glossary dialog for term definitions."""

import streamlit as st


def render_glossary_button(button_label="📚 Glossary", help_text="Methods, error models and rates", glossary_terms=None):
    """
    Render a button that opens the glossary dialog.

    Args:
        button_label: Text for the button
        help_text: Tooltip text for the button
        glossary_terms: Optional glossary dict (defaults to GLOSSARY_TERMS)
    """
    if glossary_terms is None:
        from components.glossary_definitions import GLOSSARY_TERMS
        glossary_terms = GLOSSARY_TERMS

    if st.button(button_label, help=help_text, use_container_width=True):
        show_glossary_dialog(glossary_terms)


@st.dialog("Glossary", width="large")
def show_glossary_dialog(glossary_terms):
    st.markdown("### Methods and Rates")

    for category_key, category_data in glossary_terms.items():
        icon = category_data.get("icon", "•")
        label = category_data.get("label", category_key.title())

        with st.expander(f"{icon} {label}", expanded=category_key == "methods"):
            for term_name, term_data in category_data.get("terms", {}).items():
                st.markdown(f"**{term_name}**")

                if "definition" in term_data:
                    st.markdown(term_data["definition"])

                if "formula" in term_data:
                    st.markdown(term_data["formula"])

                if "interpretation" in term_data:
                    st.markdown(term_data["interpretation"])

                if "note" in term_data:
                    st.caption(f"_Note: {term_data['note']}_")

                st.markdown("")
