"""Central finite-difference oracle for encoder gradients.

Used by the unit tests and the acceptance suite.  The oracle only evaluates
forward_loss; it never looks at how backward() was derived.
"""
import numpy as np

from densekit.encoder import EncoderConfig, backward, forward_loss, init_params


def finite_difference_max_rel_error(params, queries, positives, negatives,
                                    eps=1e-4, untouched_probe=2, rng=None):
    """Max relative error between analytic gradients and central differences,
    probing every touched parameter plus a few untouched embedding rows."""
    fwd = forward_loss(params, queries, positives, negatives)
    grads = backward(params, fwd)

    def loss():
        return forward_loss(params, queries, positives, negatives).loss

    def rel(analytic, numeric):
        return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)

    max_rel = 0.0
    rng = rng or np.random.default_rng(0)
    for name, tower in params.named_towers():
        tg = grads.towers[name]
        targets = []
        for pname, arr in tower.dense_arrays():
            targets.append((arr, getattr(tg, pname), list(np.ndindex(arr.shape))))
        touched = sorted(tg.embed_rows)
        zero = np.zeros(params.config.dim)
        probe_rows = list(touched)
        untouched = [r for r in range(params.config.buckets) if r not in tg.embed_rows]
        if untouched:
            probe_rows += list(rng.choice(untouched, size=min(untouched_probe,
                                                              len(untouched)),
                                          replace=False))
        for row in probe_rows:
            analytic_row = tg.embed_rows.get(int(row), zero)
            targets.append((tower.embed[row], analytic_row,
                            [(j,) for j in range(params.config.dim)]))
        for arr, analytic, indices in targets:
            for idx in indices:
                orig = arr[idx]
                arr[idx] = orig + eps
                lp = loss()
                arr[idx] = orig - eps
                lm = loss()
                arr[idx] = orig
                numeric = (lp - lm) / (2 * eps)
                max_rel = max(max_rel, rel(float(analytic[idx]), numeric))
    return max_rel


def random_instance(dim, batch, negs_per_query, head, shared, seed, buckets=48,
                    seq_len=(2, 6)):
    """A random small training batch plus matching params."""
    rng = np.random.default_rng(seed)
    config = EncoderConfig(dim=dim, buckets=buckets, shared=shared,
                           head="projection_layernorm" if head else "none")
    params = init_params(config, seed)

    def seq():
        n = int(rng.integers(seq_len[0], seq_len[1] + 1))
        return rng.integers(0, buckets, size=n).astype(np.int32)

    queries = [seq() for _ in range(batch)]
    positives = [seq() for _ in range(batch)]
    negatives = [[seq() for _ in range(negs_per_query)] for _ in range(batch)]
    return params, queries, positives, negatives
