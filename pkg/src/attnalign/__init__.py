"""attnalign: a desk-scale toolkit for attention-supervised neural
translation — a GRU encoder-decoder whose attention matrix is trained
against external word alignments, with autodiff, AdaDelta schedules, and
alignment/BLEU evaluation."""

__version__ = "0.1.0"
