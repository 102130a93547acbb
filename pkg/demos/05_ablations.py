"""Small ablations on the toy task.

Two comparisons: translation-invariant assignments against the general
form when the inputs are shifted by a random offset, and the number of
weight matrices per layer. Budgets are tiny, so read the numbers as
trends.
"""

from feastnet import metrics
from feastnet.toy import ToyCorrespondence, ToyExperiment
from feastnet.trainer import TrainConfig

cfg = TrainConfig(learning_rate=0.05, epochs=150)

shifted = ToyCorrespondence(seed=0, n_train=4, translate=0.1, center=False)
rows = metrics.ablation_sweep(ToyExperiment(shifted), "translation_invariant", [True, False], cfg)
print(metrics.format_table(rows))

plain = ToyCorrespondence(seed=0, n_train=4)
rows = metrics.ablation_sweep(ToyExperiment(plain), "M", [1, 4, 8], cfg)
print(metrics.format_table(rows))
