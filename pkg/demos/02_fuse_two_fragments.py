"""Joining two fragments without adding parameters.

The joint solves Y ~ A X on a handful of target samples (X: what the chain
produces, Y: what the next fragment natively expects) and multiplies A into
the fragment's first weight matrix. The stitched network then runs the
fragment's original layers on projected inputs at zero extra runtime cost.

Run:  python3 demos/02_fuse_two_fragments.py
"""

import numpy as np

from stitchkit import (
    forward,
    forward_upto,
    fragmentize,
    make_synthetic_dataset,
    start_stitchnet,
    stitch,
    train_network,
)
from stitchkit.zoo import resolve_arch

print("training two small networks on the same task...")
ds = make_synthetic_dataset(8, 120, 16, seed=3)
net_a = train_network(resolve_arch("cnn_a"), ds.train, epochs=8, lr=0.01, seed=1)
net_b = train_network(resolve_arch("cnn_b"), ds.train, epochs=8, lr=0.01, seed=2)

frags_a = fragmentize(net_a)
frags_b = fragmentize(net_b)
print(f"{net_a.id}: {len(frags_a)} fragments; {net_b.id}: {len(frags_b)} fragments")

# 32 unlabeled samples drive both the compatibility score and the solve.
rng = np.random.default_rng(9)
target = ds.train.images[rng.choice(len(ds.train), 32, replace=False)]

# Start from cnn_a's first fragment and graft cnn_b's tail onto it.
chain = start_stitchnet(frags_a[0], net_a)
tail = frags_b[-1]
x_out = forward(chain, target)
y_native = forward_upto(net_b, tail.start_layer, target)
print(f"\nchain output shape {x_out.shape} -> tail expects {y_native.shape}")

hybrid = stitch(chain, tail, x_out, y_native, terminal_labels=net_b.class_labels)
score = hybrid.provenance[-1].cka
print(f"joint score: {score:.4f}")
print(f"hybrid: {hybrid.n_fragments} fragments, {hybrid.n_params} params "
      f"(donors have {net_a.n_params} and {net_b.n_params})")

test = ds.test
preds = np.argmax(forward(hybrid, test.images), axis=1)
print(f"hybrid accuracy, no training ever: {(preds == test.labels).mean():.4f}")
if score < 0.5:
    print("(a score this low predicts a weak graft; the search in demo 03 "
          "prunes such joints instead of keeping them)")

# Self-stitching is the sanity oracle: a network re-assembled from its own
# fragments should behave like the original.
chain = start_stitchnet(frags_a[0], net_a)
for frag in frags_a[1:]:
    x_out = forward(chain, target)
    y_native = forward_upto(net_a, frag.start_layer, target)
    chain = stitch(chain, frag, x_out, y_native, terminal_labels=net_a.class_labels)
orig = np.argmax(forward(net_a, test.images), axis=1)
rebuilt = np.argmax(forward(chain, test.images), axis=1)
print(f"\nself-recomposition agreement with the original: {(orig == rebuilt).mean():.4f}")
