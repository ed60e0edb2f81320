"""Density-based clustering used to split a scene cloud into objects."""

import numpy as np
from sklearn.cluster import DBSCAN

from .validation import check_count, check_points, check_positive

NOISE = -1


def canonical_labels(labels):
    """Renumber cluster ids in order of each cluster's first point; keep noise."""
    labels = np.asarray(labels)
    out = np.full(len(labels), NOISE, dtype=np.intp)
    mapping = {}
    for i, lab in enumerate(labels):
        if lab == NOISE:
            continue
        if lab not in mapping:
            mapping[lab] = len(mapping)
        out[i] = mapping[lab]
    return out


def dbscan(cloud, eps, min_pts):
    """Label each point with a cluster id (``0, 1, ...``) or ``-1`` for noise.

    ``min_pts`` counts the point itself. Cluster ids are ordered by the
    index of each cluster's first point.
    """
    eps = check_positive(eps, "eps")
    min_pts = check_count(min_pts, "min_pts")
    cloud = check_points(cloud, "cloud", allow_empty=True)
    if len(cloud) == 0:
        return np.zeros(0, dtype=np.intp)
    labels = DBSCAN(eps=eps, min_samples=min_pts, algorithm="kd_tree", n_jobs=1).fit_predict(cloud)
    return canonical_labels(labels)


def split_clusters(cloud, labels):
    """Per-cluster point arrays sorted by size (largest first, ties by id)."""
    cloud = np.asarray(cloud)
    ids = [c for c in np.unique(labels) if c != NOISE]
    clusters = [cloud[labels == c] for c in ids]
    order = sorted(range(len(ids)), key=lambda i: (-len(clusters[i]), ids[i]))
    return [clusters[i] for i in order]
