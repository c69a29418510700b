import numpy as np

from lprefine.formats import dumps_report, format_float, read_matrix, read_vector, write_matrix, write_vector
from lprefine.rng import SplitMix64, synthetic_instance


def test_splitmix_reference_output():
    gen = SplitMix64(0)
    assert gen.next_u64() == 0xE220A8397B1DCDAF


def test_splitmix_matches_uint64_arithmetic():
    seed = 12345
    state = np.uint64(seed)
    gen = SplitMix64(seed)
    with np.errstate(over="ignore"):
        for _ in range(50):
            state = state + np.uint64(0x9E3779B97F4A7C15)
            z = state
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
            assert gen.next_u64() == int(z)


def test_uniform_and_normal_ranges():
    gen = SplitMix64(7)
    u = [gen.uniform() for _ in range(2000)]
    assert min(u) >= 0.0 and max(u) < 1.0
    z = SplitMix64(7).normals(5000)
    assert abs(z.mean()) < 0.1 and abs(z.std() - 1) < 0.1


def test_synthetic_instance_is_reproducible_and_feasible():
    a = synthetic_instance(3, 6, 20, 2, m1=4)
    b = synthetic_instance(3, 6, 20, 2, m1=4)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    A, M, N, d, rhs = a
    assert A.shape == (2, 6) and M.shape == (4, 6) and N.shape == (20, 6) and d.shape == (6,)
    A, M, N, d, rhs = synthetic_instance(3, 6, 20, 2, m1=4, pure=True)
    assert M.shape == (0, 6) and not d.any()


def test_format_float():
    assert format_float(0.1) == "0.10000000000000001"
    assert format_float(float("inf")) == "null"
    assert float(format_float(np.pi)) == np.pi


def test_report_key_order():
    text = dumps_report({"b": 1, "a": [0.5, None], "c": {"z": np.float64(2.0)}, "x": np.array([1.0])})
    assert text.index('"b"') < text.index('"a"') < text.index('"c"')
    assert '"a": [0.5, null]' in text


def test_matrix_roundtrip(tmp_path):
    mat = np.random.default_rng(0).standard_normal((3, 4))
    write_matrix(tmp_path / "a.mtx", mat)
    np.testing.assert_array_equal(read_matrix(tmp_path / "a.mtx"), mat)
    (tmp_path / "d.txt").write_text("1 2\n3 4\n")
    np.testing.assert_array_equal(read_matrix(tmp_path / "d.txt"), [[1, 2], [3, 4]])
    write_vector(tmp_path / "v.txt", [1.5, -2.0])
    np.testing.assert_array_equal(read_vector(tmp_path / "v.txt"), [1.5, -2.0])


def test_sparse_matrix_market(tmp_path):
    (tmp_path / "s.mtx").write_text(
        "%%MatrixMarket matrix coordinate real general\n2 3 2\n1 1 4.0\n2 3 -1.5\n"
    )
    np.testing.assert_array_equal(read_matrix(tmp_path / "s.mtx"), [[4, 0, 0], [0, 0, -1.5]])
