"""Adapter-based channel normalisation for a toy speech recogniser.

Subpackages map onto the pipeline: :mod:`tensorcore` (autodiff), :mod:`dsp`
(synthetic parallel corpora and features), :mod:`model` (teacher, adapter
student, CTC head), :mod:`training`, :mod:`evaluation` and :mod:`cli`.
"""
__version__ = "0.1.0"
