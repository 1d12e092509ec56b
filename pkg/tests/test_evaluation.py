import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chanorm.dsp import CorpusSpec, build_parallel_corpus, default_channels
from chanorm.errors import ConfigError, ContractError, DimensionError
from chanorm.evaluation import (CERReport, cer, cer_matrix_csv, channel_matrix_eval, edit_distance,
                                feature_diff_heatmap, heatmap_csv, hierarchy_consistency, improvement_table,
                                read_pgm, relative_improvement, round_half_up, spearman, write_pgm)
from chanorm.tensorcore import Tensor
from chanorm.training import FeatureBank

seqs = st.lists(st.integers(0, 3), max_size=8)


def levenshtein_recursive(a, b):
    # full-matrix recursion with memo, written independently of the two-row version
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def test_edit_distance_examples():
    assert edit_distance("abc", "abc") == 0
    assert edit_distance("abc", "abd") == 1
    assert edit_distance("kitten", "sitting") == 3
    assert edit_distance("", "abc") == 3 and edit_distance([], []) == 0


@settings(max_examples=200, deadline=None)
@given(seqs, seqs)
def test_edit_distance_symmetric_and_matches_oracle(a, b):
    assert edit_distance(a, b) == edit_distance(b, a) == levenshtein_recursive(tuple(a), tuple(b))


def test_cer_examples():
    assert cer(["abc", "de"], ["abc", "de"]) == 0.0
    assert round(cer(["abc"], ["abd"]), 1) == 33.3
    with pytest.raises(ContractError):
        cer([""], [""])
    with pytest.raises(ContractError):
        cer(["a"], [])


def test_cer_pooling_is_length_weighted():
    refs = ["abcd", "ef", "ghijkl"]
    hyps = ["abxd", "", "ghijk"]
    per = [100 * edit_distance(r, h) / len(r) for r, h in zip(refs, hyps)]
    weighted = sum(p * len(r) for p, r in zip(per, refs)) / sum(map(len, refs))
    assert cer(refs, hyps) == pytest.approx(weighted, abs=1e-12)


@pytest.mark.parametrize("base,new,rel", [
    (2.54, 1.99, 21.7), (4.40, 4.02, 8.6), (1.64, 1.67, -1.8), (2.55, 2.07, 18.8), (2.77, 2.28, 17.7),
    (2.32, 1.93, 16.8), (1.82, 1.77, 2.7), (1.96, 1.76, 10.2), (2.50, 2.19, 12.4),
])
def test_relative_improvement_table_cells(base, new, rel):
    assert relative_improvement(base, new) == rel


def test_relative_improvement_edges():
    assert relative_improvement(0.0, 1.0) is None
    assert relative_improvement(3.0, 0.0) == 100.0
    # 0.05 sits on the rounding boundary and goes up
    assert relative_improvement(200.0, 199.9) == 0.1
    assert round_half_up(0.25) == 0.3 and round_half_up(-0.25) == -0.3
    with pytest.raises(ContractError):
        relative_improvement(-1.0, 1.0)


# channel matrices


class BlankHead:
    def logits(self, emb):
        out = np.zeros((emb.shape[0], 9))
        out[:, 8] = 1.0
        return out


class IdentityEncoder:
    def encode(self, x):
        return Tensor(np.asarray(x))


@pytest.fixture(scope="module")
def small():
    chans = [c for c in default_channels() if c.name in ("COND", "LAV", "WCAM")]
    return build_parallel_corpus(CorpusSpec(n_train=1, n_dev=1, n_test=3, channels=chans), 1)


def test_all_blank_head_gives_100(small):
    rep = channel_matrix_eval(IdentityEncoder(), BlankHead(), small["test"])
    assert rep.per_channel == {"COND": 100.0, "LAV": 100.0, "WCAM": 100.0}
    assert all(d.hyp == [] and d.distance == len(d.ref) for d in rep.details)


def test_oracle_head_gives_zero(small):
    # frames carry no token identity, so the oracle reads the reference off the utterance order
    refs = iter([list(u.tokens) for u in small["test"]] * 3)

    class Oracle:
        def logits(self, emb):
            ref = next(refs)
            out = np.full((emb.shape[0], 9), -10.0)
            out[:, 8] = 10.0
            for k, tok in enumerate(ref):
                out[2 * k + 1] = -10.0
                out[2 * k + 1, tok] = 10.0
            return out

    rep = channel_matrix_eval(IdentityEncoder(), Oracle(), small["test"])
    assert set(rep.per_channel.values()) == {0.0}


def test_matrix_eval_missing_channel(small):
    with pytest.raises(ConfigError):
        channel_matrix_eval(IdentityEncoder(), BlankHead(), small["test"], channels=["ADR"])


def test_matrix_eval_deterministic(small):
    from chanorm.model import CTCHead, EncoderConfig, PretrainedEncoder

    enc = PretrainedEncoder(EncoderConfig(num_blocks=1, model_dim=8, num_heads=2, ffn_dim=8, adapter_bottleneck=2), 0)
    head = CTCHead(8, 8, 0)
    a = channel_matrix_eval(enc, head, small["test"], bank=FeatureBank())
    b = channel_matrix_eval(enc, head, small["test"], bank=FeatureBank())
    assert a.per_channel == b.per_channel


# hierarchy


def rep(vals, label):
    return CERReport(dict(zip(["A", "B", "C", "D"], vals)), label=label)


def test_spearman_extremes():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)


def test_hierarchy_report():
    h = hierarchy_consistency([rep([1, 2, 3, 4], "m1"), rep([2, 3, 4, 9], "m2"), rep([4, 3, 2, 1], "m3")])
    rhos = {(a, b): r for a, b, r in h.pairs}
    assert rhos[("m1", "m2")] == pytest.approx(1.0) and rhos[("m1", "m3")] == pytest.approx(-1.0)
    assert h.mean == pytest.approx(-1 / 3) and h.min == pytest.approx(-1.0)
    assert h.best_channel == {"m1": ["A"], "m2": ["A"], "m3": ["D"]}


def test_hierarchy_ties_listed():
    h = hierarchy_consistency([rep([1, 1, 3, 4], "x"), rep([1, 2, 3, 4], "y")])
    assert h.best_channel["x"] == ["A", "B"]


def test_hierarchy_errors():
    with pytest.raises(ContractError):
        hierarchy_consistency([rep([1, 2, 3, 4], "x")])
    with pytest.raises(ContractError):
        hierarchy_consistency([CERReport({"A": 1.0}), CERReport({"A": 2.0})])
    with pytest.raises(ContractError):
        hierarchy_consistency([rep([1, 2, 3, 4], "x"), CERReport({"A": 1.0, "Z": 2.0})])


# tables


def test_improvement_table_csv():
    base = CERReport({"COND": 1.64, "ADR": 2.54}, label="pre")
    new = CERReport({"COND": 1.67, "ADR": 1.99}, label="adp")
    text = improvement_table(base, new, "Van_adp", "COND").to_csv().splitlines()
    assert text[0] == "method,train_channel,test_channel,cer_baseline,cer_method,rel_percent"
    assert text[1] == "Van_adp,COND,COND,1.64,1.67,-1.8"
    assert text[2] == "Van_adp,COND,ADR,2.54,1.99,21.7"
    assert text[3].startswith("Van_adp,COND,AVG,2.09,1.83,")


def test_improvement_table_zero_baseline_blank():
    t = improvement_table(CERReport({"A": 0.0}), CERReport({"A": 0.0}), "m", "A")
    assert t.to_csv().splitlines()[1].endswith(",")


def test_cer_matrix_csv_union_and_blanks():
    a = CERReport({"COND": 1.0, "LAV": 3.0}, label="a")
    b = CERReport({"COND": 2.0}, label="b")
    lines = cer_matrix_csv([a, b]).splitlines()
    assert lines == ["model,COND,LAV,AVG", "a,1.0000,3.0000,2.0000", "b,2.0000,,2.0000"]


# heatmaps


def test_heatmap_examples():
    e = np.random.default_rng(0).normal(size=(5, 3))
    mask = np.array([1, 1, 0, 0, 1], bool)
    assert not feature_diff_heatmap(e, e, mask).values.any()
    hm = feature_diff_heatmap(e, e + 1, mask)
    assert hm.values.shape == (3, 5)
    np.testing.assert_allclose(hm.values, 1.0, atol=1e-12)
    assert hm.mean_where(True) == pytest.approx(1.0)


def test_heatmap_symmetric_nonnegative():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    m = np.ones(6, bool)
    h1, h2 = feature_diff_heatmap(a, b, m), feature_diff_heatmap(b, a, m)
    assert np.array_equal(h1.values, h2.values) and (h1.values >= 0).all()
    assert np.isnan(h1.mean_where(False))


def test_heatmap_shape_errors():
    with pytest.raises(DimensionError):
        feature_diff_heatmap(np.zeros((4, 2)), np.zeros((4, 3)), np.ones(4, bool))
    with pytest.raises(DimensionError):
        feature_diff_heatmap(np.zeros((4, 2)), np.zeros((4, 2)), np.ones(5, bool))


def test_pgm_roundtrip(tmp_path):
    v = np.array([[0.0, 0.5], [1.0, 2.0]])
    img = read_pgm(write_pgm(v, tmp_path / "h.pgm", vmax=1.0))
    assert img.tolist() == [[255, 128], [0, 0]]
    assert read_pgm(write_pgm(np.zeros((2, 3)), tmp_path / "z.pgm")).tolist() == [[255] * 3] * 2


def test_heatmap_csv_layout():
    hm = feature_diff_heatmap(np.zeros((3, 2)), np.ones((3, 2)), np.array([1, 0, 1], bool))
    lines = heatmap_csv(hm).splitlines()
    assert lines[0] == "dim,t0,t1,t2"
    assert lines[1] == "0,1.0,1.0,1.0"
    assert lines[-1] == "mask,1,0,1"
