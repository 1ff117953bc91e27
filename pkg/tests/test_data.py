import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import DATA, linear_regression_data, nonlinear_classes
from pln.data import (
    Dataset,
    MinMaxScaler,
    SplitSpec,
    load_csv,
    load_libsvm,
    load_manifest,
    one_hot,
    partition,
    run_trials,
)
from pln.errors import ConfigError, DataError
from pln.trainer import TrainConfig


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestCsv:
    def test_small_classification(self, tmp_path):
        d = load_csv(write(tmp_path, "a.csv", "1,2,a\n3,4,b\n5,6,a\n"))
        np.testing.assert_array_equal(d.X, [[1, 3, 5], [2, 4, 6]])
        np.testing.assert_array_equal(d.T, [[1, 0, 1], [0, 1, 0]])
        assert d.labels == ["a", "b"]

    def test_two_targets(self, tmp_path):
        rows = "\n".join(",".join(str(i + k) for k in range(22)) for i in range(5))
        d = load_csv(write(tmp_path, "p.csv", rows), target_columns=[-2, -1])
        assert (d.P, d.Q, d.task) == (20, 2, "regression")

    def test_numeric_labels_sorted_numerically(self, tmp_path):
        d = load_csv(write(tmp_path, "n.csv", "0,10\n0,9\n0,2.0\n"))
        assert d.labels == ["2", "9", "10"]

    def test_header_and_delimiter(self, tmp_path):
        d = load_csv(write(tmp_path, "h.tsv", "f1\tf2\ty\n1\t2\tx\n"), delimiter="\t", header=True)
        assert d.X.shape == (2, 1)

    def test_fixed_label_map(self, tmp_path):
        d = load_csv(write(tmp_path, "t.csv", "1,b\n"), labels=["a", "b"])
        np.testing.assert_array_equal(d.T, [[0], [1]])
        with pytest.raises(DataError, match="unknown label"):
            load_csv(write(tmp_path, "u.csv", "1,c\n"), labels=["a", "b"])

    @pytest.mark.parametrize("text,match", [
        ("", "no samples"),
        ("1,2,a\n3,b\n", "row 2"),
        ("1,x,a\n", "non-numeric"),
    ])
    def test_errors(self, tmp_path, text, match):
        with pytest.raises(DataError, match=match):
            load_csv(write(tmp_path, "bad.csv", text))

    def test_missing(self, tmp_path):
        with pytest.raises(DataError):
            load_csv(tmp_path / "nope.csv")

    def test_deterministic(self):
        a = load_csv(DATA / "vowel_train.csv")
        b = load_csv(DATA / "vowel_train.csv")
        assert a.X.tobytes() == b.X.tobytes() and a.T.tobytes() == b.T.tobytes()
        assert (a.P, a.Q, a.n_samples) == (10, 11, 528)


class TestLibsvm:
    def test_line(self, tmp_path):
        d = load_libsvm(write(tmp_path, "a.svm", "3 1:0.5 4:-1\n"), n_features=4)
        np.testing.assert_array_equal(d.X[:, 0], [0.5, 0, 0, -1])
        assert d.labels == ["3"]

    def test_satimage_shape(self, tmp_path):
        rows = np.loadtxt(DATA / "satimage.csv", delimiter=",")[:4435]
        lines = [f"{int(r[-1])} " + " ".join(f"{i + 1}:{v:g}" for i, v in enumerate(r[:-1]) if v) for r in rows]
        d = load_libsvm(write(tmp_path, "sat.svm", "\n".join(lines)), n_features=36)
        assert (d.P, d.Q, d.n_samples) == (36, 6, 4435)
        np.testing.assert_array_equal(d.X, rows[:, :-1].T)

    @pytest.mark.parametrize("text", ["1 2:1 2:3\n", "1 5:1\n", "1 0:1\n", "1 a:b\n", "1 3\n", "# only a comment\n"])
    def test_errors(self, tmp_path, text):
        with pytest.raises(DataError):
            load_libsvm(write(tmp_path, "bad.svm", text), n_features=4)

    def test_regression(self, tmp_path):
        d = load_libsvm(write(tmp_path, "r.svm", "1.5 1:2\n-2 2:1\n"), task="regression")
        np.testing.assert_array_equal(d.T, [[1.5, -2]])


class TestDataset:
    def test_validation(self):
        with pytest.raises(DataError):
            Dataset(np.ones((2, 3)), np.ones((1, 4)))
        with pytest.raises(DataError):
            Dataset(np.ones((2, 0)), np.ones((1, 0)))
        with pytest.raises(DataError):
            Dataset(np.ones(3), np.ones((1, 3)))
        with pytest.raises(DataError):
            Dataset(np.ones((1, 3)), np.ones((1, 3)), task="ranking")

    @given(st.lists(st.sampled_from("abcde"), min_size=1, max_size=40))
    def test_one_hot_valid(self, labels):
        T, names = one_hot(labels)
        assert np.all(T.sum(axis=0) == 1) and set(np.unique(T)) <= {0.0, 1.0}
        assert [names[i] for i in T.argmax(axis=0)] == labels


class TestPartition:
    def test_fixed_passthrough(self):
        pair = (nonlinear_classes(J=10), nonlinear_classes(J=5, seed=1))
        assert partition(pair, SplitSpec()) is pair
        with pytest.raises(ConfigError):
            partition(pair[0], SplitSpec())

    def test_letter_sized_split(self):
        data = Dataset(np.arange(20000.0)[None, :], np.ones((1, 20000)), "regression")
        a = partition(data, SplitSpec("random", 13333, 6667, seed=1))
        b = partition(data, SplitSpec("random", 13333, 6667, seed=2))
        assert a[0].n_samples == b[0].n_samples == 13333
        assert a[1].n_samples == b[1].n_samples == 6667
        assert not np.array_equal(a[0].X, b[0].X)

    @settings(max_examples=30)
    @given(st.integers(1, 50), st.integers(1, 50), st.integers(0, 2**31))
    def test_disjoint_and_deterministic(self, n_train, n_test, seed):
        total = 100
        data = Dataset(np.arange(float(total))[None, :], np.zeros((1, total)), "regression")
        spec = SplitSpec("random", n_train, n_test, seed)
        tr, te = partition(data, spec)
        ids_tr, ids_te = tr.X[0], te.X[0]
        assert len(ids_tr) == n_train and len(ids_te) == n_test
        assert not set(ids_tr) & set(ids_te)
        tr2, te2 = partition(data, spec)
        assert np.array_equal(tr.X, tr2.X) and np.array_equal(te.X, te2.X)

    def test_infeasible(self):
        with pytest.raises(DataError):
            partition(nonlinear_classes(J=10), SplitSpec("random", 8, 5))
        with pytest.raises(ConfigError):
            SplitSpec("random", 0, 5)
        with pytest.raises(ConfigError):
            SplitSpec("random", 5, 0)
        with pytest.raises(ConfigError):
            SplitSpec("bootstrap")


def test_minmax_scaler():
    X = np.array([[0.0, 5.0, 10.0], [3.0, 3.0, 3.0]])
    sc = MinMaxScaler().fit(X)
    np.testing.assert_allclose(sc.transform(X), [[-1, 0, 1], [-1, -1, -1]])
    np.testing.assert_allclose(sc.transform([[20.0], [3.0]]), [[3], [-1]])


class TestManifest:
    def test_vowel(self):
        m = load_manifest(DATA / "vowel.toml")
        train, test = m.load()
        assert (train.n_samples, test.n_samples, train.Q) == (528, 462, 11)
        assert train.labels == test.labels

    def test_satimage(self):
        m = load_manifest(DATA / "satimage.toml")
        train, test = m.load(split_seed=3)
        assert (train.P, train.Q, train.n_samples, test.n_samples) == (36, 6, 4435, 2000)

    def test_data_dir_env(self, tmp_path, monkeypatch):
        write(tmp_path, "bodyfat.csv", "\n".join(",".join(["1"] * 15) for _ in range(252)))
        monkeypatch.setenv("PLN_DATA_DIR", str(tmp_path))
        train, test = load_manifest(DATA / "bodyfat.toml").load(split_seed=0)
        assert (train.P, train.Q, train.n_samples, test.n_samples) == (14, 1, 168, 84)

    def test_missing_data_file(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PLN_DATA_DIR", str(tmp_path))
        with pytest.raises(ConfigError, match="not found"):
            load_manifest(DATA / "bodyfat.toml")

    @pytest.mark.parametrize("text", [
        'name = "x"\n',
        'file = "d.csv"\ntrain = "d.csv"\n',
        'file = "d.csv"\ncolour = 1\n',
        'file = "d.csv"\nformat = "xml"\n',
        'train = "d.csv"\n',
        'file = "d.csv"\n[split]\nmode = "random"\nwhatever = 1\n',
        'file = \n',
    ])
    def test_bad(self, tmp_path, text):
        write(tmp_path, "d.csv", "1,a\n")
        with pytest.raises(ConfigError):
            load_manifest(write(tmp_path, "m.toml", text))

    def test_label_union(self, tmp_path):
        write(tmp_path, "tr.csv", "1,a\n2,b\n")
        write(tmp_path, "te.csv", "1,c\n")
        train, test = load_manifest(write(tmp_path, "m.toml", 'train = "tr.csv"\ntest = "te.csv"\n')).load()
        assert train.labels == test.labels == ["a", "b", "c"]


class TestTrials:
    def test_single_trial_std_zero(self):
        summary = run_trials(linear_regression_data(J=100), SplitSpec("random", 70, 30),
                             TrainConfig(l_max=1, delta=5), trials=1)
        assert len(summary.trials) == 1
        assert all(std == 0.0 for _, std in summary.stats.values())

    def test_constant_model_std_zero(self):
        pair = (nonlinear_classes(J=60), nonlinear_classes(J=40, seed=1))
        summary = run_trials(pair, SplitSpec(), TrainConfig(l_max=0), trials=4)
        assert summary.row("test_accuracy")[1] == 0.0
        assert len({t["model_seed"] for t in summary.trials}) == 4

    def test_seeds_and_order(self):
        data = nonlinear_classes(J=80)
        cfg = TrainConfig(l_max=1, delta=4, n_max=14, seed=9)
        a = run_trials(data, SplitSpec("random", 60, 20), cfg, trials=3)
        b = run_trials(data, SplitSpec("random", 60, 20), cfg, trials=3, n_jobs=2)
        strip = lambda s: [{k: v for k, v in t.items() if k != "train_time_s"} for t in s.trials]  # noqa: E731
        assert strip(a) == strip(b)
        assert [t["trial"] for t in a.trials] == [0, 1, 2]
        assert len({t["split_seed"] for t in a.trials}) == 3
        mean, std = a.row("test_nme_db")
        assert mean == pytest.approx(np.mean([t["test_nme_db"] for t in a.trials]))
        assert std == pytest.approx(np.std([t["test_nme_db"] for t in a.trials]))

    def test_bad_trials(self):
        with pytest.raises(ConfigError):
            run_trials(nonlinear_classes(J=10), SplitSpec("random", 5, 5), TrainConfig(), trials=0)
