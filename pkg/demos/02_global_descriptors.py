"""Pooling a convolutional feature map into a global descriptor.

A feature map is C x H x W of non-negative activations. Spatial mean
(spoc) summarizes everything, spatial max (mac) keeps the strongest
response, and the generalized mean (gem) interpolates between them via
its exponent p. Combining several pooled views gives one unit-length
embedding.
"""

import numpy as np

from cbirkit import PoolingSpec, combine_descriptors, pool

rng = np.random.default_rng(0)
feature_map = rng.uniform(0.0, 1.0, size=(4, 7, 7))
feature_map[2, 3, 3] = 4.0  # one strong activation in channel 2

for spec in [PoolingSpec("spoc"), PoolingSpec("gem", 3.0), PoolingSpec("mac")]:
    v = pool(feature_map, spec)
    label = spec.kind if spec.kind != "gem" else f"gem(p={spec.p:g})"
    print(f"{label:>10}: {np.round(v, 3)}")

# sweep p: the generalized mean climbs from the average toward the max
print("\nchannel 2 as p grows:")
for p in [1, 2, 4, 8, 32, 128]:
    print(f"  p={p:<4d} ->", round(pool(feature_map, PoolingSpec("gem", p))[2], 4))

embedding = combine_descriptors(feature_map, [PoolingSpec("gem", 3.0), PoolingSpec("mac")])
print("\ncombined gem+mac embedding: length", embedding.shape[0],
      "norm", round(float(np.linalg.norm(embedding)), 6))
