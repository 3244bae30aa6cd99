"""Experiment reproduction: genomic motif simulation and pixel-erasure evaluation."""
