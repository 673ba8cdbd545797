"""Thermalization of randomly coupled qubits after a quench, with a noisy-hardware emulation."""

__version__ = "0.1.0"
