"""Averaging the probability outputs of several composed networks.

The search emits a whole population of scored networks; the high-scoring
slice can be ensembled by averaging predicted probabilities, trading a
little compute for variance reduction, with every member still far smaller
than a conventionally trained model.

Run:  python3 demos/05_ensembles.py
"""

import numpy as np

from stitchkit import (
    GenerationConfig,
    build_pool,
    ensemble_predict,
    ensemble_sweep,
    evaluate,
    generate,
    make_synthetic_dataset,
    select_ensemble_pool,
    superclass_label_map,
)
from stitchkit.zoo import build_zoo

ds = make_synthetic_dataset(8, 200, 16, seed=7)
zoo = build_zoo(ds.train, seed=7)
pool = build_pool(zoo)
groups = superclass_label_map(8, 2)

result = generate(pool, ds.train, GenerationConfig(seed=7))
members = select_ensemble_pool(result, cka_min=0.8, k=10)
print(f"{len(result.entries)} composed networks; {len(members)} score above 0.8:")
for m in members:
    acc = evaluate(m, ds.test, groups).accuracy
    print(f"  {m.id}: score={m.cumulative_score:.4f} accuracy={acc:.4f} params={m.n_params}")

print("\naccuracy as the ensemble grows (score-ordered prefixes):")
for size, acc in ensemble_sweep(members, ds.test, groups):
    total = sum(m.n_params for m in members[:size])
    print(f"  size {size}: accuracy={acc:.4f}  total params={total}")

probs, labels = ensemble_predict(members, ds.test.images[:5], groups)
print("\nfirst five ensemble rows (they sum to 1):")
for row, lab in zip(probs, labels):
    print(f"  {np.round(row, 4)} -> class {lab}")
