import pytest

from raga.config import parse_config
from raga.verify import VerifyError, verify_bounds

BASE = """
dataset: {kind: quadratic, dim: 3, per_shard: 8, offset_scale: 0.5, noise_std: %s}
model: {kind: quadratic}
partition: {clients: 6}
trainer:
  rounds: 12
  local_steps: 2
  batch_size: %d
  global_lr: {kind: constant, eta0: 0.5}
  local_lr: {kind: constant, eta0: 0.1}
  attack: {kind: %s}
byz_fraction: %s
"""


def test_deterministic_instance_single_seed():
    rep = verify_bounds(parse_config(BASE % (0.0, 8, "none", 0.0)), horizons=(10,))
    assert rep.seeds == [0] and rep.constants.sigma == 0.0
    assert rep.passed, [c.line() for c in rep.checks]
    names = [c.name for c in rep.checks]
    assert names == ["lemma3 every round", "lemma2 mean over seeds", "lemma1 mean over seeds", "theorem1 T=10", "theorem2 T=10"]


def test_stochastic_attacked_instance_uses_30_seeds():
    rep = verify_bounds(parse_config(BASE % (1.0, 3, "signflip", 0.34)), horizons=(10,))
    assert len(rep.seeds) == 30 and rep.constants.sigma > 0 and rep.constants.c_alpha < 1
    assert rep.passed, [c.line() for c in rep.checks]


def test_theorem2_domain_reported():
    text = (BASE % (0.0, 8, "none", 0.0)).replace("eta0: 0.5", "eta0: 1.5")
    rep = verify_bounds(parse_config(text), horizons=(10,))
    t2 = [c for c in rep.checks if c.name.startswith("theorem2")][0]
    assert not t2.passed and "outside" in t2.note


def test_requires_quadratic_geomed():
    with pytest.raises(VerifyError, match="quadratic"):
        verify_bounds(parse_config(""))
    text = (BASE % (0.0, 8, "none", 0.0)).replace("trainer:\n", "trainer:\n  aggregator: {kind: mean}\n")
    with pytest.raises(VerifyError, match="geometric-median"):
        verify_bounds(parse_config(text))
