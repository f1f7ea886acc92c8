"""Smoke test for the fsml extension module.

Build and install first:
    maturin build --release -m crates/py/Cargo.toml && pip install target/wheels/fsml-*.whl
"""

import json
import os
import tempfile

import fsml


def main():
    domains = [fsml.generate_synthetic(f"domain{i}", pool_size=160, seed=7 + i) for i in range(3)]
    assert [d.name for d in domains] == ["domain0", "domain1", "domain2"]
    assert len(domains[0]) == 160 and len(domains[0].labels) == 8

    table = fsml.embed_toy(domains, dim=32, seed=7)
    labels = {name for d in domains for name in d.labels}
    assert len(table) == sum(len(d) for d in domains) + len(labels)

    config = json.dumps({"epochs": 2, "kernel_epochs": 2, "episodes_per_domain": 10, "seed": 7})
    model, report = fsml.train(domains[1:], table, config)
    report = json.loads(report)
    assert report["source_domains"] == ["domain1", "domain2"]
    assert 0.0 <= model.r <= 1.0 and abs(model.alpha - 0.3) < 1e-6

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.json")
        model.save(path)
        assert fsml.Model.load(path).to_json() == model.to_json()

    episodes = fsml.build_episodes(domains[0], k=1, n_episodes=5, seed=7)
    assert len(episodes) == 5 and not set(episodes[0].support_ids) & set(episodes[0].query_ids)

    q = episodes[0].query_ids[0]
    p = fsml.predict(model, domains[0], table, episodes[0], q)
    for key in ("scores", "t_meta", "t_est", "t", "labels"):
        assert key in p, key
    assert min(p["t_meta"], p["t_est"]) <= p["t"] <= max(p["t_meta"], p["t_est"])
    assert all(s > p["t"] for s, name in zip(p["scores"], p["label_names"]) if name in p["labels"])

    meta = fsml.evaluate(model, domains[0], table, episodes, mode="meta_only")
    cal = fsml.evaluate(model, domains[0], table, episodes, mode="calibrated")
    assert meta["mode"] == "meta_only" and cal["mode"] == "calibrated"
    assert len(cal["episode_f1"]) == 5 and 0.0 <= cal["mean_f1"] <= 1.0

    try:
        fsml.evaluate(model, domains[0], table, episodes, mode="fixed")
    except ValueError:
        pass
    else:
        raise AssertionError("fixed mode without a threshold must fail")

    print(f"smoke test ok: calibrated F1 {cal['mean_f1']:.3f}, meta-only F1 {meta['mean_f1']:.3f}")


if __name__ == "__main__":
    main()
