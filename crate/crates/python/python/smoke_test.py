"""Smoke test for the tscot_py extension.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`,
then run `python crates/python/python/smoke_test.py`.
"""
import json
import math
import os
import tempfile

import tscot_py as ts

TINY = json.dumps({
    "epochs": 3,
    "warmup_epochs": 1,
    "batch_size": 16,
    "seed": 7,
    "encoder": {"levels": 2, "channels_per_level": [4, 8], "kernel_size": 3, "embedding_dim": 8},
})


def main():
    raw = ts.generate_synthetic(12, 32, 1, 3, seed=0)
    raw_test = ts.generate_synthetic(12, 32, 1, 3, seed=1000)
    assert (raw.n, raw.t, raw.d) == (36, 32, 1)
    train, (test,) = ts.standardize(raw, [raw_test])

    spec = train.frequency_view()
    assert len(spec) == 36 and len(spec[0]) == 17

    model = ts.Model.train(train, TINY)
    assert model.epoch == 3
    assert model.loss_csv.startswith("epoch,")

    emb_tr = model.embed(train)
    emb_te = model.embed(test)
    assert len(emb_tr[0]) == 16 and len(model.embed(test, "T")[0]) == 8
    rep = ts.linear_probe(emb_tr, train.labels, emb_te, test.labels, 0)
    for key in ("accuracy", "auroc", "nmi", "l2"):
        assert math.isfinite(rep[key]), key
    print("probe", rep)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.tsckpt")
        model.save(path)
        again = ts.Model.load(path)
        assert again.embed(test) == emb_te

        data_path = os.path.join(tmp, "d.tsd")
        train.save(data_path)
        assert ts.Dataset.load(data_path).to_list() == train.to_list()

    assert ts.nmi([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert ts.auroc_macro([[0.9, 0.1], [0.2, 0.8]], [0, 1]) == 1.0
    noisy = train.with_noise("missing", 0.5, 3)
    assert noisy.to_list() != train.to_list()

    try:
        ts.Model.train(train, json.dumps({"epochs": 0}))
    except ValueError:
        pass
    else:
        raise AssertionError("invalid config accepted")
    print("smoke test ok")


if __name__ == "__main__":
    main()
