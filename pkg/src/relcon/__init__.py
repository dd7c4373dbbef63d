"""Self-supervised relation extraction at desk scale.

Contrastive pretraining over recurring entity pairs, multi-center
contrastive finetuning with proxies, and classwise kNN inference, built
around a small from-scratch transformer encoder and a synthetic corpus
generator with known ground truth.
"""

from . import corpus, encoder, evaluation, inference, losses, mining, trainer

__version__ = "0.1.0"

__all__ = ["corpus", "encoder", "evaluation", "inference", "losses", "mining", "trainer", "__version__"]
