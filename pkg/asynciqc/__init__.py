"""Asynchronous sample-and-hold IQC analysis and sampled-data loop certification."""
