import math

import numpy as np
import pytest

from lpa3 import infotheory as it
from lpa3.infotheory import (Channel, DiscreteJoint, UnknownVariableError, additive_instance,
                             check_symmetric_sufficiency, check_theorem_conditions, conditional_entropy,
                             conditional_mi, entropy, mutual_information, random_joint, search_min_sufficient,
                             task_nuisance_decompose)
from oracles import brute_force_min_sufficient, canonical_partition, entropy_plain, mi_plain


def test_uniform_entropy():
    assert abs(entropy(DiscreteJoint(["X"], np.full(4, 0.25)), "X") - math.log(4)) <= 1e-15


def test_independence_and_copy():
    px, py = np.array([0.3, 0.7]), np.array([0.2, 0.5, 0.3])
    assert mutual_information(DiscreteJoint(["X", "Y"], np.outer(px, py)), "X", "Y") <= 1e-12
    same = DiscreteJoint(["X", "Y"], np.diag([0.5, 0.5]))
    assert abs(mutual_information(same, "X", "Y") - math.log(2)) <= 1e-15


def test_unknown_variable():
    j = DiscreteJoint(["X"], [0.5, 0.5])
    with pytest.raises(UnknownVariableError):
        entropy(j, "Z")


def test_bad_tables_rejected():
    with pytest.raises(ValueError):
        DiscreteJoint(["X"], [0.5, 0.6])
    with pytest.raises(ValueError):
        DiscreteJoint(["X"], [1.5, -0.5])
    with pytest.raises(ValueError):
        Channel([[0.5, 0.4]])


def test_measures_match_plain_sums():
    rng = np.random.default_rng(0)
    for _ in range(50):
        j = random_joint(rng.integers(2, 7, size=2), ("X", "Y"), rng, zero_frac=0.3)
        t = j.table.tolist()
        assert abs(mutual_information(j, "X", "Y") - mi_plain(t)) <= 1e-12
        assert abs(entropy(j, "X") - entropy_plain(j.table.sum(axis=1))) <= 1e-12
        h_xy = entropy_plain(j.table.reshape(-1))
        assert abs(conditional_entropy(j, "X", "Y") - (h_xy - entropy_plain(j.table.sum(axis=0)))) <= 1e-12


def test_chain_rule_and_non_negativity():
    rng = np.random.default_rng(1)
    for _ in range(100):
        j = random_joint(rng.integers(2, 5, size=3), ("A", "B", "C"), rng, zero_frac=0.2)
        lhs = mutual_information(j, "A", ("B", "C"))
        rhs = mutual_information(j, "A", "B") + conditional_mi(j, "A", "C", "B")
        assert abs(lhs - rhs) <= 1e-10
        assert min(lhs, conditional_mi(j, "A", "B", "C"), entropy(j, "A")) >= 0


def test_data_processing():
    rng = np.random.default_rng(2)
    for _ in range(50):
        j = random_joint(rng.integers(2, 5, size=2), ("X'", "N"), rng)
        k = int(rng.integers(1, 4))
        ch = Channel(rng.dirichlet(np.ones(k), size=j.sizes["X'"]))
        z = j.apply_channel(ch, "X'", "Z")
        assert mutual_information(z, "Z", "N") <= mutual_information(z, "X'", "N") + 1e-10


def test_channel_marginal_consistency():
    rng = np.random.default_rng(3)
    j = random_joint((3, 2), ("X", "Y"), rng)
    ch = Channel(rng.dirichlet(np.ones(4), size=6))
    z = j.apply_channel(ch, ("X", "Y"), "Z")
    assert np.allclose(z.probs(["X", "Y"]), j.table, atol=1e-15)
    assert np.allclose(z.probs("Z"), j.table.reshape(-1) @ ch.matrix, atol=1e-15)


def test_table_text_round_trip(tmp_path):
    j = random_joint((2, 3), ("X", "Y"), np.random.default_rng(4))
    path = tmp_path / "joint.txt"
    path.write_text("# comment line\n" + j.to_text())
    back = DiscreteJoint.read(path)
    assert back.names == ("X", "Y") and np.array_equal(back.table, j.table)
    with pytest.raises(ValueError):
        DiscreteJoint.from_text("X:2\n0.5\n")
    with pytest.raises(ValueError):
        DiscreteJoint.from_text("X2\n0.5\n0.5\n")


# ---------------------------------------------------------- decomposition


def test_noiseless_decomposition():
    d = task_nuisance_decompose(DiscreteJoint(["X", "Y"], np.diag([0.25, 0.75])))
    assert d.passed and len(d.nuisance_probs) == 1


def test_independent_decomposition_carries_all_randomness():
    px = np.array([0.1, 0.2, 0.3, 0.4])
    d = task_nuisance_decompose(DiscreteJoint(["X", "Y"], np.outer(px, [0.5, 0.5])))
    assert d.passed
    assert entropy_plain(d.nuisance_probs) >= entropy_plain(px) - 1e-12


def test_seeded_decomposition():
    j = random_joint((3, 3), ("X", "Y"), np.random.default_rng(7))
    d = task_nuisance_decompose(j)
    assert d.mi_nuisance_label <= 1e-12 and d.residual_entropy <= 1e-12
    assert d.reconstruction_error <= 1e-12


def test_decomposition_generator_reproduces_table():
    j = random_joint((4, 3), ("X", "Y"), np.random.default_rng(8), zero_frac=0.3)
    d = task_nuisance_decompose(j)
    rebuilt = np.zeros((4, 3))
    py = j.table.sum(axis=0)
    for y in range(3):
        for n, mass in enumerate(d.nuisance_probs):
            rebuilt[d.generator[y, n], y] += py[y] * mass
    assert np.max(np.abs(rebuilt - j.table)) <= 1e-12


# ------------------------------------------------------------------ search


def test_projection_is_minimal():
    py, pn = np.array([0.3, 0.7]), np.array([0.2, 0.3, 0.5])
    t = np.zeros((6, 2))
    for y in range(2):
        for n in range(3):
            t[y * 3 + n, y] = py[y] * pn[n]
    j = DiscreteJoint(["X", "Y"], t)
    z, cert = search_min_sufficient(j, 2)
    assert canonical_partition(z) == (0, 0, 0, 1, 1, 1)
    assert abs(cert.best_info_x - mutual_information(j, "X", "Y")) <= 1e-12
    assert cert.certified


def test_constant_map():
    indep = DiscreteJoint(["X", "Y"], np.outer([0.5, 0.5], [0.4, 0.6]))
    z, cert = search_min_sufficient(indep, 1)
    assert z == (0, 0) and cert.certified
    dep = DiscreteJoint(["X", "Y"], np.diag([0.5, 0.5]))
    z, cert = search_min_sufficient(dep, 1)
    assert z is None and not cert.certified and cert.message


def deterministic_label_joint(rng, nx, ny):
    labels = rng.integers(0, ny, size=nx)
    labels[:ny] = np.arange(ny)
    t = np.zeros((nx, ny))
    t[np.arange(nx), labels] = rng.dirichlet(np.ones(nx))
    return DiscreteJoint(["X", "Y"], t)


def test_seeded_search_matches_product_enumeration():
    j = deterministic_label_joint(np.random.default_rng(3), 6, 2)
    assert conditional_entropy(j, "Y", "X") <= 1e-12
    z, cert = search_min_sufficient(j, 2)
    best, minimal = brute_force_min_sufficient(j.table.tolist(), 2)
    assert abs(cert.best_info_x - best) <= 1e-12
    assert canonical_partition(z) in minimal


def test_search_ledger_is_sorted_and_complete():
    j = deterministic_label_joint(np.random.default_rng(5), 5, 3)
    _, cert = search_min_sufficient(j, 3)
    keys = [(round(e.info_x, 12), e.z_map) for e in cert.ledger]
    assert keys == sorted(keys)
    # set partitions of 5 items into at most 3 blocks: S(5,1)+S(5,2)+S(5,3)
    assert cert.n_maps == len(cert.ledger) == 1 + 15 + 25


def test_search_limits():
    j = DiscreteJoint(["X", "Y"], np.full((9, 2), 1 / 18))
    with pytest.raises(ValueError):
        search_min_sufficient(j, 2)
    with pytest.raises(ValueError):
        search_min_sufficient(DiscreteJoint(["X", "Y"], np.full((3, 2), 1 / 6)), 4)


def test_certify_map_epsilon():
    j = deterministic_label_joint(np.random.default_rng(6), 4, 2)
    z, cert = search_min_sufficient(j, 4)
    assert it.certify_map(j, z, 0.0).certified
    identity = tuple(range(4))
    gap = entropy(j, "X") - cert.minimal_info_x
    assert gap > 1e-6
    assert not it.certify_map(j, identity, gap / 2).certified
    assert it.certify_map(j, identity, gap + 1e-6).certified


# ------------------------------------------------------------ theorem checks


def _with_copy(j, src, name):
    return j.apply_channel(Channel.deterministic(range(j.sizes[src]), j.sizes[src]), src, name)


def test_identity_augmentation_report():
    inst = it.random_additive_instance(np.random.default_rng(0))
    j = _with_copy(inst.joint.drop("X'"), "X", "X'")
    rep = check_theorem_conditions(j)
    assert abs(rep.cond_a_slack) <= 1e-12 and rep.cond_a
    assert abs(rep.epsilon - mutual_information(j, "X", "N")) <= 1e-12
    assert rep.residual <= 1e-12 and rep.assumption_holds


def test_independent_augmentation_report():
    inst = it.random_additive_instance(np.random.default_rng(1))
    base = inst.joint.drop("X'")
    j = base.apply_channel(Channel(np.tile([0.3, 0.7], (base.table.size, 1))), base.names, "X'")
    rep = check_theorem_conditions(j)
    assert not rep.cond_a and rep.epsilon <= 1e-12


def test_resampled_nuisance_is_perfect():
    inst = additive_instance([0.4, 0.6], [0.5, 0.3, 0.2], [0, 10], [0, 1, 3])
    rep = check_theorem_conditions(inst.joint)
    assert abs(rep.cond_a_slack) <= 1e-9 and rep.epsilon <= 1e-9 and rep.residual <= 1e-12
    assert it.check_nuisance_invariance(inst)


def test_assumption_flag_when_label_not_recoverable():
    t = np.full((2, 2, 1, 1), 0.25)
    j = DiscreteJoint(["X", "Y", "N", "X'"], t)
    assert not check_theorem_conditions(j).identity_guaranteed


def test_symmetric_sufficiency():
    rng = np.random.default_rng(0)
    for _ in range(50):
        rep = check_symmetric_sufficiency(it.symmetric_instance(rng))
        assert rep.premises_hold and abs(rep.mi_gap) <= 1e-9 and rep.verdict
    j = random_joint((3, 2), ("X", "Y"), rng)
    const = j.apply_channel(Channel(np.tile([1.0, 0.0, 0.0], (3, 1))), "X", "X'")
    assert not check_symmetric_sufficiency(const).symmetric


def test_verify_suite_passes(tmp_path):
    user = random_joint((3, 2), ("X", "Y"), np.random.default_rng(9))
    results = it.verify_suite(0, [("user", user)], n_random=20)
    assert results and all(r.passed for r in results), [r.name for r in results if not r.passed]


def test_set_partitions_count():
    # Bell number B(4) = 15
    assert len(list(it.set_partitions(4, 4))) == 15
    assert list(it.set_partitions(3, 1)) == [(0, 0, 0)]
