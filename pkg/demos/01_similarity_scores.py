"""What the compatibility score measures, and what it ignores.

Linear CKA compares two activation sets sample-by-sample: 1.0 means one is
an (orthogonal, scaled) linear image of the other, 0 means statistically
unrelated features. That makes it a good gate for "can a least-squares
projection glue these two representations together?".

Run:  python3 demos/01_similarity_scores.py
"""

import numpy as np

from stitchkit import cka_linear, cka_minibatch

rng = np.random.default_rng(0)

# A batch of 64 samples with 10 features, plus transformed views of it.
x = rng.normal(size=(10, 64))
q, _ = np.linalg.qr(rng.normal(size=(10, 10)))

print("identical activations:          ", f"{cka_linear(x, x):.6f}")
print("rotated (orthogonal Q @ X):     ", f"{cka_linear(x, q @ x):.6f}")
print("scaled by 42:                   ", f"{cka_linear(x, 42.0 * x):.6f}")

# A lossy but useful view: only the top half of the features survive.
print("half the features kept:         ", f"{cka_linear(x, x[:5]):.6f}")

# Unrelated activations score low but not exactly zero at finite n.
z = rng.normal(size=(10, 64))
print("independent random features:    ", f"{cka_linear(x, z):.6f}")

# A nonlinear distortion breaks linear compatibility and the score sees it.
print("after ReLU (nonlinear damage):  ", f"{cka_linear(x, np.maximum(x, 0)):.6f}")

# The minibatch estimator trades a little accuracy for bounded memory.
xb = [x[:, i * 16 : (i + 1) * 16] for i in range(4)]
yb = [(q @ x)[:, i * 16 : (i + 1) * 16] for i in range(4)]
print("\nminibatch (4 x 16) vs full batch on the rotated view:")
print("  full: ", f"{cka_linear(x, q @ x):.6f}")
print("  mini: ", f"{cka_minibatch(xb, yb):.6f}")
