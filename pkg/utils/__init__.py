"""Problem ingestion, instance files and trace-file helpers."""
