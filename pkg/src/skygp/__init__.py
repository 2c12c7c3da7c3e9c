"""Streaming GP regression with a bounded, progressively generated pool of exact GP experts."""
