import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dextr import archspace, jet
from dextr.archspace import OPS, SPACE_SIZE, CellArch, EncodingError, SpaceConfig, parse_encoding
from dextr.network import NetworkSpec, Node, count_flops, count_params, forward, infer_shapes

EXAMPLE = "|skip_connect~0|+|none~0|nor_conv_3x3~1|+|avg_pool_3x3~0|nor_conv_1x1~1|skip_connect~2|"
archs = st.tuples(*[st.sampled_from(OPS)] * 6).map(CellArch)


def test_parse_example():
    a = parse_encoding(EXAMPLE)
    assert a.edges == ("skip_connect", "none", "nor_conv_3x3", "avg_pool_3x3", "nor_conv_1x1", "skip_connect")
    assert a.op(3, 2) == "skip_connect" and a.op(2, 1) == "nor_conv_3x3"
    assert a.encode() == EXAMPLE and str(a) == EXAMPLE


@given(archs)
def test_round_trip(a):
    s = a.encode()
    assert parse_encoding(s) == a
    assert parse_encoding(s).encode() == s
    assert CellArch.from_index(a.index()) == a


@pytest.mark.parametrize(
    "bad,offset,fragment",
    [
        ("|bad_op~0|+|none~0|none~1|+|none~0|none~1|none~2|", 1, "'bad_op'"),
        ("none~0|+|none~0|none~1|+|none~0|none~1|none~2|", 0, "delimited"),
        ("|none~1|+|none~0|none~1|+|none~0|none~1|none~2|", 6, "source"),
        ("|none~0|+|none~0|+|none~0|none~1|none~2|", 9, "2 incoming"),
        ("|none~0|+|none~0|none~1|", 24, "3 node groups"),
        ("|none0|+|none~0|none~1|+|none~0|none~1|none~2|", 1, "lacks"),
        ("|none~0|+|none~0|none~1|+|none~0|none~1|none~2|+|none~0|", 47, "more than 3"),
    ],
)
def test_parse_errors_carry_offsets(bad, offset, fragment):
    with pytest.raises(EncodingError) as ei:
        parse_encoding(bad)
    assert ei.value.offset == offset
    assert fragment in str(ei.value)
    assert f"at byte {offset}" in str(ei.value)


def test_parse_rejects_non_string():
    with pytest.raises(EncodingError):
        parse_encoding(None)


def test_enumerate_space_is_complete():
    encs = {a.encode() for a in archspace.enumerate_space()}
    assert len(encs) == SPACE_SIZE == 15625
    first = list(archspace.enumerate_space(3))
    assert [a.index() for a in first] == [0, 1, 2]
    with pytest.raises(ValueError):
        CellArch.from_index(SPACE_SIZE)


@given(archs, st.integers(0, 2**32 - 1))
def test_mutate_changes_exactly_one_edge(a, seed):
    b = archspace.mutate(a, seed)
    assert sum(x != y for x, y in zip(a.edges, b.edges)) == 1
    assert archspace.mutate(a, seed) == b


def test_sample_deterministic():
    assert archspace.sample(7) == archspace.sample(7)
    assert len({archspace.sample(s) for s in range(50)}) > 40


def test_cellarch_validation():
    with pytest.raises(ValueError):
        CellArch(("none",) * 5)
    with pytest.raises(ValueError):
        CellArch(("none",) * 5 + ("conv",))
    with pytest.raises(ValueError):
        SpaceConfig(stem_channels=0)


# ---------------------------------------------------------------- sizes


def params_by_hand(arch, C=8, stages=3, classes=10, cin=3):
    cell = sum({"nor_conv_3x3": 9, "nor_conv_1x1": 1}.get(op, 0) for op in arch.edges)
    total, ch = 9 * cin * C, C
    for s in range(stages):
        if s:
            total += 9 * ch * 2 * ch + 9 * 4 * ch * ch + ch * 2 * ch
            ch *= 2
        total += cell * ch * ch
    return total + classes * ch + classes


def flops_by_hand(arch, C=8, hw=32, cin=3, classes=10):
    cell = sum({"nor_conv_3x3": 9, "nor_conv_1x1": 1}.get(op, 0) for op in arch.edges)
    total = 2 * 9 * cin * C * hw * hw + 2 * cell * C * C * hw * hw
    ch = C
    for _ in range(2):
        hw //= 2
        total += 2 * hw * hw * (9 * ch * 2 * ch + 9 * 4 * ch * ch + ch * 2 * ch)
        ch *= 2
        total += 2 * cell * ch * ch * hw * hw
    return total + 2 * classes * ch


def test_all_none_counts_frozen():
    a = CellArch(("none",) * 6)
    net = archspace.instantiate(a, seed=0)
    assert count_params(net) == 18466
    assert count_flops(net) == 4113024


@settings(max_examples=30, deadline=None)
@given(archs)
def test_counts_match_hand_formula(a):
    net = archspace.instantiate(a, seed=1)
    assert count_params(net) == params_by_hand(a)
    assert count_flops(net) == flops_by_hand(a)
    assert count_params(net) == sum(w.size for w in net.weights.values())


def test_all_skip_has_no_cell_params():
    skip = archspace.instantiate(CellArch(("skip_connect",) * 6))
    none = archspace.instantiate(CellArch(("none",) * 6))
    assert count_params(skip) == count_params(none)


def test_tiny_layer_counts():
    w = np.zeros((4, 2, 3, 3))
    net = NetworkSpec([Node("input", "input"), Node("c", "conv", (0,), 1, 1)], {"c": w}, (2, 8, 8))
    assert count_params(net) == 72
    assert count_flops(net) == 2 * 4 * 2 * 9 * 64
    sq = NetworkSpec([Node("input", "input"), Node("c", "conv", (0,), 1, 1)], {"c": np.zeros((4, 4, 3, 3))}, (4, 8, 8))
    assert count_flops(sq) == 18432
    lin = NetworkSpec(
        [Node("input", "input"), Node("g", "gap", (0,)), Node("fc", "linear", (1,))],
        {"fc": np.zeros((10, 16)), "fc.bias": np.zeros(10)},
        (16, 2, 2),
    )
    assert count_params(lin) == 170


def test_instantiate_is_deterministic_and_layer_keyed():
    a, b = archspace.sample(1), archspace.sample(2)
    n1, n2 = archspace.instantiate(a, seed=5), archspace.instantiate(a, seed=5)
    assert n1.weights.keys() == n2.weights.keys()
    for k in n1.weights:
        assert np.array_equal(n1.weights[k], n2.weights[k])
    # layers shared by two cells get the same draw
    other = archspace.instantiate(b, seed=5)
    assert np.array_equal(n1.weights["stem.conv"], other.weights["stem.conv"])
    assert not np.array_equal(n1.weights["stem.conv"], archspace.instantiate(a, seed=6).weights["stem.conv"])


def test_kaiming_variance():
    net = archspace.instantiate(CellArch(("nor_conv_3x3",) * 6), SpaceConfig(stem_channels=16), seed=0)
    w = net.weights["s2.c0.e01.conv"]
    fan_in = w.shape[1] * 9
    assert np.var(w) == pytest.approx(2.0 / fan_in, rel=0.05)


@settings(max_examples=15, deadline=None)
@given(archs)
def test_every_arch_forwards(a):
    cfg = SpaceConfig(input_shape=(3, 8, 8))
    net = archspace.instantiate(a, cfg, seed=3)
    x = jet.Tensor.constant(np.random.default_rng(0).uniform(size=(1, 3, 8, 8)))
    res = forward(net, x)
    assert res.output.shape == (1, 10)
    assert res.valid
    assert infer_shapes(net)[-1] == (1, 10)


def test_all_none_cell_still_runs():
    net = archspace.instantiate(CellArch(("none",) * 6), seed=0)
    res = forward(net, jet.Tensor.constant(np.ones((1, 3, 32, 32))))
    assert res.valid and res.output.shape == (1, 10)
    # nothing after the last dangling cell produces a record
    assert all(not r.name.startswith("head") for r in res.records)


def test_all_skip_cell_output_is_scaled_input():
    # node1 = x, node2 = x + node1 = 2x, node3 = x + node1 + node2 = 4x
    cfg = SpaceConfig(num_stages=1, input_shape=(3, 6, 6))
    net = archspace.instantiate(CellArch(("skip_connect",) * 6), cfg, seed=0)
    x = jet.Tensor.constant(np.random.default_rng(0).standard_normal((1, 3, 6, 6)))
    res = forward(net, x)
    stem = jet.instance_norm(jet.conv2d(x, net.weights["stem.conv"], 1, 1))
    h = jet.global_avg_pool(jet.relu(jet.instance_norm(stem.scale(4.0))))
    ref = jet.linear(h, net.weights["head.fc"], net.weights["head.fc.bias"])
    np.testing.assert_allclose(res.output.v, ref.v, atol=1e-12)


def test_inv_cond_bounded_over_seeded_nets():
    cfg = SpaceConfig(input_shape=(3, 8, 8))
    for s in range(100):
        net = archspace.instantiate(archspace.sample(s), cfg, seed=s)
        x = jet.Tensor.constant(np.random.default_rng(s).uniform(size=(1, 3, 8, 8)))
        assert all(0.0 <= r.inv_cond <= 1.0 for r in forward(net, x).records)
