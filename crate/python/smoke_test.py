"""Quick end-to-end check of the Python bindings."""

import json
import math
import tempfile

import uapdfl


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol


p = uapdfl.softmax([1.0, 2.0, 3.0])
assert close(sum(p), 1.0)
assert p[0] < p[1] < p[2]

q = [0.25, 0.25, 0.25, 0.25]
r = [0.4, 0.3, 0.2, 0.1]
kl = sum(a * math.log(a / b) for a, b in zip(r, q))
assert close(uapdfl.kl_div(r, q), kl, 1e-6)
assert close(uapdfl.js_div(r, q), uapdfl.js_div(q, r))
assert close(uapdfl.js_div(q, q), 0.0)

m = uapdfl.Model.mlp([16, 64, 32, 4], 2, seed=1)
assert m.num_params == 3300, m.num_params
assert m.dims == [16, 64, 32, 4]
rep = m.unit_representation()
assert len(rep) == 4 and close(sum(rep), 1.0)
assert len(m.aux_representation()) == 32
assert len(m.forward([[0.0] * 16, [1.0] * 16])) == 2

other = uapdfl.Model.mlp([16, 64, 32, 4], 2, seed=2)
mixed = uapdfl.Model.combine(m, other)
assert mixed.params()[:3168] == m.params()[:3168]
assert mixed.params()[3168:] == other.params()[3168:]

ds = uapdfl.Dataset.generate(seed=3)
assert len(ds) == 1200 and ds.num_classes == 4
train, test = ds.dirichlet_partition(10, 0.5, seed=3)
assert len(train) == 10 and all(len(t) >= 10 for t in train)
assert sorted(i for t in train for i in t) == sorted(ds.train_indices)
train, _ = ds.shard_partition(10, 2, seed=3)
assert all(len({ds.labels[i] for i in t}) <= 2 for t in train)

cfg = uapdfl.parse_config(
    """
seeds = [1]
arms = ["ua_pdfl", "local"]

[partition]
clients = 6

[protocol]
n_com = 2
rounds = 3
"""
)
assert cfg.clients == 6 and cfg.rounds == 3
assert uapdfl.parse_config(cfg.to_toml()).to_toml() == cfg.to_toml()

res = uapdfl.run_experiment(cfg, "ua_pdfl", 1)
assert len(res["mean_accuracy"]) == 4
assert 0.0 <= res["final_accuracy"] <= 1.0
local = uapdfl.run_experiment(cfg, "local", 1)
assert local["total_scalars"] == 0

with tempfile.TemporaryDirectory() as out:
    cfg = uapdfl.parse_config(cfg.to_toml().replace('out_dir = "results"', f'out_dir = "{out}"'))
    summary = json.loads(uapdfl.run_matrix(cfg))
    assert len(summary["arms"]) == 2 and not summary["failures"]

bc = uapdfl.parse_config("[bound_check]\ntrials = 20\nrounds = 60\n")
check = uapdfl.bound_check(bc, seed=0)
assert check["holds"], check
assert len(check["mean_gaps"]) == 61

print("python smoke test ok:", ", ".join(uapdfl.ARMS))
