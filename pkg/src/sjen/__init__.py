"""Monaural speech enhancement with spatial knowledge injected from a binaural teacher.

The package wires a dual-encoder convolutional-recurrent magnitude network and a
residual phase network into a three-model distillation workflow: a binaural
teacher, a plain monaural baseline ("bad student"), and the distilled student.
Everything runs on a small float64 reverse-mode autodiff engine so gradients,
losses, and the simulation pipeline are all checkable against independent
oracles.
"""

__version__ = "0.1.0"
