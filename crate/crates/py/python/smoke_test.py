"""Smoke test for the pykgfuse extension module.

Run after `maturin develop` (or `pip install .`) in crates/py. If a path is
given, it is read as a GK store written by `kgfuse train-gk`.
"""

import math
import sys

import pykgfuse as kg


def main() -> None:
    assert math.isclose(kg.cosine([1.0, 2.0], [2.0, 0.0]), 1 / math.sqrt(5), rel_tol=1e-12)
    assert kg.masked_sentences("flu", "has symptoms", "fever") == (
        "flu [MASK] fever",
        "flu has symptoms [MASK]",
        "[MASK] has symptoms fever",
        "flu has symptoms fever",
    )

    toy = kg.ToyEmbedder(dim=32, seed=3)
    assert toy.embed("flu [MASK] fever") == toy.embed("flu fever")
    w = kg.triple_weight(toy, "flu", "has symptoms", "fever")
    assert -1.0 <= w <= 1.0

    best, best_w, weights = kg.predict_relation(toy, "flu", "fever", ["has symptoms", "treated by"])
    assert best in (0, 1) and best_w == max(x for x in weights if x is not None)

    groups = kg.normalize_weights([("s", "r", "o1", -0.3), ("s", "r", "o2", 0.9)])
    assert groups == [("s", "r", [("o1", 0.0), ("o2", 1.0)])]

    p, r, f1 = kg.prf(3, 1, 1)
    assert (p, r, f1) == (0.75, 0.75, 0.75)

    try:
        kg.cosine([0.0, 0.0], [1.0, 0.0])
    except kg.KgfuseError:
        pass
    else:
        raise AssertionError("zero vector accepted")

    if len(sys.argv) > 1:
        store = kg.GkStore.load(sys.argv[1])
        first = store.ids()[0]
        assert len(store.vector(first)) == store.final_dim
        print(f"GK store: {len(store)} entities, dim {store.final_dim}, hash {store.content_hash()[:12]}")

    print("pykgfuse smoke test passed")


if __name__ == "__main__":
    main()
