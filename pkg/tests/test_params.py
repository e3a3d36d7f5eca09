import numpy as np
import pytest

from fedstress.params import LayoutEntry, ParameterSet, layout_size, mlp_layout


def test_mlp_layout_structure():
    layout = mlp_layout([12, 128, 32, 1])
    assert [e.kind for e in layout] == ["weight", "bias"] * 3
    assert layout[0].shape == (12, 128)
    assert layout[1].shape == (128,)
    assert layout_size(layout) == 12 * 128 + 128 + 128 * 32 + 32 + 32 + 1


@pytest.mark.parametrize("dims", [[12], [], [4, 0, 1], [4, -2, 1], [4, 2.5, 1]])
def test_mlp_layout_rejects_bad_dims(dims):
    with pytest.raises(ValueError):
        mlp_layout(dims)


def test_value_count_must_match_layout():
    layout = mlp_layout([2, 1])
    ParameterSet(layout, [1.0, 2.0, 3.0])  # 2 weights + 1 bias
    with pytest.raises(ValueError, match="3 values"):
        ParameterSet(layout, [1.0, 2.0])


def test_values_are_read_only():
    ps = ParameterSet(mlp_layout([2, 1]), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        ps.values[0] = 9.0


def test_elementwise_ops():
    layout = mlp_layout([2, 1])
    a = ParameterSet(layout, [1.0, 2.0, 3.0])
    b = ParameterSet(layout, [10.0, 20.0, 30.0])
    assert np.array_equal(a.add(b).values, [11.0, 22.0, 33.0])
    assert np.array_equal(b.sub(a).values, [9.0, 18.0, 27.0])
    assert np.array_equal(a.scale(-2.0).values, [-2.0, -4.0, -6.0])
    assert a.l2_norm() == pytest.approx(np.sqrt(14.0))


def test_mismatched_layouts_refuse_arithmetic():
    a = ParameterSet(mlp_layout([2, 1]), [1.0, 2.0, 3.0])
    b = ParameterSet(mlp_layout([1, 2]), [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(ValueError, match="layouts do not match"):
        a.add(b)


def test_unpack_views_shapes_and_contents():
    layout = mlp_layout([2, 2, 1])
    values = np.arange(1.0, 1.0 + layout_size(layout))
    ps = ParameterSet(layout, values)
    views = ps.unpack()
    assert [v.shape for v in views] == [(2, 2), (2,), (2, 1), (1,)]
    assert np.array_equal(views[0], [[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(np.concatenate([v.ravel() for v in views]), values)


def test_zeros_factory():
    layout = mlp_layout([3, 2, 1])
    z = ParameterSet.zeros(layout)
    assert z.size == layout_size(layout)
    assert not z.values.any()


def test_layout_entry_size():
    assert LayoutEntry(0, "weight", (3, 4)).size == 12
    assert LayoutEntry(0, "bias", (4,)).size == 4
