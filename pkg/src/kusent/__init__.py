"""Central Kurdish sentiment analysis pipeline.

Normalization of Arabic-script text, WordPiece tokenization, BERT-style
masked-language-model pretraining, and three sentiment classifiers
(fine-tune, BiLSTM, MLP) with confusion-matrix evaluation.
"""

__version__ = "0.1.0"

FORMAT_VERSION = 1
