"""Peek inside the block encoder: attention weights and top-k compression.

Feeds one block of embedded timesteps through a self-attention layer,
prints the per-timestep "contribution" scores (column sums of the
head-averaged attention matrix), and shows which timesteps the top-k
compressor keeps. Also contrasts the ablation compression strategies.

Run:  python demos/attention_compression.py
"""

import numpy as np

from blockrl.layers import AttentionLayer, compress_variant, topk_positions
from blockrl.tensor import ParameterStore, Tensor


def main():
    rng = np.random.default_rng(0)
    L, d, heads, k = 12, 16, 4, 3
    store = ParameterStore()
    layer = AttentionLayer(store, "demo", d, heads, ffn_hidden=32,
                           dropout_rate=0.0, rng=rng)

    block = Tensor(rng.standard_normal((L, d)))
    out = layer(block, rng, training=False)

    print(f"block of L={L} timesteps, d={d}, {heads} attention heads")
    print("per-timestep contributions (sum over the block is L):")
    kept = set(topk_positions(out.contributions, k))
    for t, c in enumerate(out.contributions):
        mark = " <- kept by top-k" if t in kept else ""
        print(f"  t={t:2d}: {c:6.3f} {'#' * int(c * 30)}{mark}")
    print(f"contributions sum: {out.contributions.sum():.6f}")

    print()
    print(f"compression strategies (k={k}):")
    yk, pos = compress_variant(out, "topk", k)
    print(f"  topk         -> shape {yk.shape}, keeps timesteps {[int(p) for p in pos]}")
    pooled, _ = compress_variant(out, "pooling", k)
    print(f"  pooling      -> shape {pooled.shape} (column sums, no ranking)")
    avg, pos = compress_variant(out, "topk_average", k)
    print(f"  topk_average -> shape {avg.shape}, contribution-weighted mean "
          f"of timesteps {[int(p) for p in pos]}")
    lin_map = Tensor(rng.standard_normal((k * d // L, d)))
    lin, _ = compress_variant(out, "linear", k, linear_map=lin_map)
    print(f"  linear       -> shape {lin.shape} (learned projection)")
    rnd, pos = compress_variant(out, "random", k, rng=np.random.default_rng(1))
    print(f"  random       -> shape {rnd.shape}, keeps timesteps {[int(p) for p in pos]}")


if __name__ == "__main__":
    main()
