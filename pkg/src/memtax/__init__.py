"""memtax: a workbench for recurrent memory architectures.

Four cell types (vanilla RNN, LSTM, differentiable stack, differentiable RAM)
trained with full-unroll backprop-through-time on synthetic sequence tasks,
plus mechanical verification that each architecture simulates the weaker ones
exactly under parameter constraints.
"""

__version__ = "0.1.0"
