"""Combining embeddings from several models, and PCA whitening.

Three models embed the same ten items, each with its own noise.
Concatenating the L2-normalized embeddings and renormalizing averages
the cosine structure: the cosine between two concatenated rows is exactly
the mean of the three per-model cosines. Whitening equalizes the variance
that a correlated cloud concentrates in a few directions.
"""

import numpy as np

from cbirkit import EmbeddingMatrix, IdRecord, concat_features, l2_normalize, pca_fit, pca_transform

rng = np.random.default_rng(1)
n, dim = 10, 12
ids = [IdRecord(f"item{i}", "catalog", f"item{i}", 1, "gallery") for i in range(n)]
truth = rng.normal(size=(n, dim))

models = []
for _ in range(3):
    noisy = truth + 0.6 * rng.normal(size=(n, dim))
    models.append(l2_normalize(EmbeddingMatrix(noisy, ids)))

combined = concat_features(models)
print("combined matrix:", combined.n_rows, "x", combined.dim)

i, j = 0, 1
per_model = [float(m.data[i] @ m.data[j]) for m in models]
print("per-model cos(item0, item1):", [round(c, 4) for c in per_model])
print("combined cos(item0, item1): ", round(float(combined.data[i] @ combined.data[j]), 4))
print("mean of per-model cosines:  ", round(float(np.mean(per_model)), 4))

# whitening: stretch one direction, then undo it
stretched = rng.normal(size=(2000, 4)) * np.array([5.0, 2.0, 1.0, 0.5])
cloud = EmbeddingMatrix(stretched, [IdRecord(f"p{i}", "x", "b", 1, "gallery")
                                    for i in range(2000)])
white = pca_transform(pca_fit(cloud, whiten=True), cloud)
print("\nvariance before whitening:", np.round(cloud.data.var(axis=0), 2))
print("variance after whitening: ", np.round(white.data.var(axis=0), 2))
