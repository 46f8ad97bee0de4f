import numpy as np
import pytest
from hypothesis import given, strategies as st

from nftlab import domains as D


def test_classification_regeneration_is_bit_identical():
    a = D.gen_classification_domain("original", 300, 4, 16, 5)
    b = D.gen_classification_domain("original", 300, 4, 16, 5)
    assert a.inputs.tobytes() == b.inputs.tobytes() and a.labels.tobytes() == b.labels.tobytes()


def test_generation_regeneration_is_bit_identical():
    a = D.gen_generation_domain("restricted", 50, 16, 2)
    b = D.gen_generation_domain("restricted", 50, 16, 2)
    assert a.inputs.tobytes() == b.inputs.tobytes() and a.labels is None


def _logistic_probe(x, y, steps=300, lr=0.5):
    # plain gradient descent on softmax regression; the oracle for separability
    xb = np.hstack([x, np.ones((len(x), 1))])
    xb = (xb - np.r_[x.mean(0), 0]) / np.r_[x.std(0), 1]
    w = np.zeros((xb.shape[1], y.shape[1]))
    for _ in range(steps):
        z = xb @ w
        p = np.exp(z - z.max(1, keepdims=True))
        p /= p.sum(1, keepdims=True)
        w -= lr * xb.T @ (p - y) / len(x)
    return xb, w


def test_two_class_domain_linearly_separable():
    ds = D.gen_classification_domain("original", 2000, 2, 16, 0)
    xb, w = _logistic_probe(ds.inputs.astype(np.float64), ds.labels)
    assert np.mean(np.argmax(xb @ w, 1) == ds.label_index) > 0.9


@pytest.mark.parametrize("domain", ["original", "restricted"])
def test_bayes_rule_accuracy_at_least_95_percent(domain):
    ds = D.gen_classification_domain(domain, 40000, 4, 16, 0)
    means, offset = D.class_geometry(domain, 4, 16)
    dist = ((ds.inputs[:, None, :] - (means + offset)[None]) ** 2).sum(2)
    assert np.mean(dist.argmin(1) == ds.label_index) >= 0.95


@given(n=st.integers(4, 500), c=st.integers(2, 8))
def test_labels_balanced(n, c):
    ds = D.gen_classification_domain("x", n, c, 4, 1)
    counts = ds.labels.sum(0)
    assert counts.max() - counts.min() <= 1
    assert np.all(np.abs(counts - n / c) <= max(1, 0.05 * n / c))


def test_domains_differ():
    a, oa = D.class_geometry("original", 4, 16)
    b, ob = D.class_geometry("restricted", 4, 16)
    assert not np.allclose(a + oa, b + ob)


def test_generation_pixels_in_unit_interval():
    ds = D.gen_generation_domain("original", 400, 64, 0)
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1


def test_generation_domains_mean_images_differ():
    a = D.gen_generation_domain("original", 500, 64, 0).inputs.mean(0)
    b = D.gen_generation_domain("restricted", 500, 64, 0).inputs.mean(0)
    assert np.linalg.norm(a - b) > 0.1


def test_split_sizes_example():
    ds = D.gen_classification_domain("original", 100, 4, 4, 0)
    s = D.split(ds, 0.2, 0)
    assert (len(s.defender_half), len(s.adversary_half), len(s.test)) == (40, 40, 20)


@given(n=st.integers(5, 400), frac=st.floats(0.05, 0.6), seed=st.integers(0, 1000))
def test_split_is_a_disjoint_cover(n, frac, seed):
    ds = D.gen_classification_domain("original", n, 2, 3, 0)
    tagged = D.Dataset(np.arange(n, dtype=np.float32)[:, None].repeat(3, 1), ds.labels, "t", 0)
    try:
        s = D.split(tagged, frac, seed)
    except ValueError:
        assert n * frac < 1.5 or n - round(n * frac) < 2
        return
    ids = [p.inputs[:, 0].astype(int) for p in (s.defender_half, s.adversary_half, s.test)]
    allids = np.concatenate(ids)
    assert sorted(allids) == list(range(n))
    assert 0 <= len(ids[0]) - len(ids[1]) <= 1


def test_reseeding_changes_membership_not_sizes():
    ds = D.Dataset(np.arange(100, dtype=np.float32)[:, None], None, "t", 0)
    a, b = D.split(ds, 0.2, 0), D.split(ds, 0.2, 1)
    assert len(a.test) == len(b.test)
    assert not np.array_equal(a.test.inputs, b.test.inputs)


def test_split_too_small():
    ds = D.Dataset(np.zeros((2, 2), np.float32), None, "t", 0)
    with pytest.raises(ValueError):
        D.split(ds, 0.5, 0)


def test_batches_keep_short_tail():
    sizes = [len(i) for i in D.batch_indices(10, 4, 0, epochs=1)]
    assert sizes == [4, 4, 2]


@given(n=st.integers(1, 60), bs=st.integers(1, 20), seed=st.integers(0, 99))
def test_each_epoch_is_a_permutation(n, bs, seed):
    it = D.batch_indices(n, bs, seed, epochs=2)
    per_epoch = -(-n // bs)
    batches = list(it)
    assert len(batches) == 2 * per_epoch
    for e in range(2):
        idx = np.concatenate(batches[e * per_epoch:(e + 1) * per_epoch])
        assert sorted(idx) == list(range(n))


def test_batch_order_deterministic():
    ds = D.gen_classification_domain("original", 30, 3, 2, 0)
    a = [x.tobytes() for x, _ in D.batches(ds, 7, 4, epochs=1)]
    b = [x.tobytes() for x, _ in D.batches(ds, 7, 4, epochs=1)]
    assert a == b


def test_binary_table_round_trip(tmp_path):
    ds = D.gen_classification_domain("original", 20, 3, 5, 0)
    D.save_dataset(ds, tmp_path / "d.bin")
    back = D.load_dataset(tmp_path / "d.bin")
    assert back.inputs.tobytes() == ds.inputs.tobytes()
    assert np.array_equal(back.labels, ds.labels)
    data = (tmp_path / "d.bin").read_bytes()
    assert np.frombuffer(data[:12], "<u4").tolist() == [20, 5, 3]
    assert len(data) == 12 + 4 * 20 * 5 + 4 * 20


def test_binary_table_label_free_and_truncated():
    ds = D.gen_generation_domain("original", 6, 4, 0)
    data = D.dumps_dataset(ds)
    assert D.loads_dataset(data).labels is None
    with pytest.raises(ValueError):
        D.loads_dataset(data[:-1])


def test_dataset_rejects_soft_labels():
    with pytest.raises(ValueError):
        D.Dataset(np.zeros((1, 2), np.float32), np.array([[0.5, 0.5]]), "t", 0)
