"""Composition cost vs last-layer fine-tuning cost, in samples processed.

Fine-tuning replaces the head and iterates over labeled data; composition
spends M samples per examined joint and no labels at all. This prints the
accuracy-vs-samples curves behind that comparison.

Run:  python3 demos/04_data_efficiency.py
"""

from stitchkit import (
    GenerationConfig,
    build_pool,
    evaluate,
    finetune_last_layer,
    generate,
    make_synthetic_dataset,
    remap_dataset,
    superclass_label_map,
)
from stitchkit.zoo import build_zoo

ds = make_synthetic_dataset(8, 200, 16, seed=7)
zoo = build_zoo(ds.train, seed=7)
pool = build_pool(zoo)
groups = superclass_label_map(8, 2)

cfg = GenerationConfig(samples_m=32, seed=7)
result = generate(pool, ds.train, cfg)
accs = {sn.id: evaluate(sn, ds.test, groups).accuracy for sn, _ in result.entries}
best_id, best_acc = max(accs.items(), key=lambda kv: kv[1])
cost = cfg.samples_m * min(
    result.emission_joints[i] for i, a in accs.items() if a >= best_acc
)
print(f"best composed network: {best_id} at accuracy {best_acc:.4f}")
print(f"samples processed to reach it: {cost} (32 per joint examined)\n")

sub_train = remap_dataset(ds.train, groups)
sub_test = remap_dataset(ds.test, groups)
budget = 6400
for net in zoo:
    _, curve = finetune_last_layer(
        net, sub_train, budget, seed=0, eval_dataset=sub_test
    )
    reach = next((s for s, a in curve if a >= best_acc), None)
    marks = {0, 320, 640, 1280, 2560, 6400}
    line = "  ".join(f"{s}:{a:.3f}" for s, a in curve if s in marks)
    status = f"reached at {reach}" if reach else f"not reached in {budget}"
    print(f"fine-tune {net.id} (new head, labels required): {status}")
    print(f"  curve: {line}")
