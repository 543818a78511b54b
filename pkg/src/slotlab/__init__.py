"""slotlab: a desk-scale lab for on-the-job learning of slot-filling NLU.

The package covers the full loop: corpus generation from slotted patterns
and a typed mention lexicon, initial tagger training, a simulated
production phase with short-term-memory patching and replay fine-tuning,
and continuous three-way evaluation with reporting.
"""

__version__ = "0.1.0"
