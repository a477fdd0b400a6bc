"""Stability forecasting from windowed mode decompositions and a recurrent
graph memory network.

Pipeline stages: synthetic labeled scenarios over a generation-mix grid
(`datagen`), sliding-window dynamic mode decomposition (`dmd`), five-layer
dynamic adjacency tensors (`adjacency`), the graph-convolved recurrent
forecaster (`model`), training with hand-derived gradients (`training`),
channel ranking (`selection`), and metrics/robustness studies
(`evaluation`). The `cli` module wires everything into file-based commands.
"""

__version__ = "0.1.0"
