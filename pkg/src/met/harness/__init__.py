"""Workload generation, mock function sink, reporting and benchmarks."""
