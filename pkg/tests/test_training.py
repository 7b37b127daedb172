from dataclasses import replace

import numpy as np
import pytest

from panda.errors import SizeError
from panda.graph import GraphSample
from panda.model import ModelSpec
from panda.synth import generate_samples
from panda.training import (
    DataSplit,
    SearchSpace,
    TrainConfig,
    TrialResult,
    TrialSummary,
    confidence_interval,
    grid_search,
    run_trials,
    train_one,
)

SMALL = TrainConfig(lr=0.01, dropout=0.0, layers=2, p=8, max_epochs=6, patience=2, batch=8, trials=2)
GCN = ModelSpec(backbone="gcn", layers=2, p=8, in_features=3)
PANDA = ModelSpec(backbone="panda-gcn", layers=2, p=8, p_high=12, k=2, in_features=3)


@pytest.fixture(scope="module")
def data():
    return generate_samples("barbell", 30, seed=0, sizes={"clique": (3, 4), "bridge": (1, 2)})


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.lr, c.dropout, c.layers, c.p, c.max_epochs, c.patience, c.batch, c.trials) == (
            0.001, 0.5, 4, 64, 500, 100, 32, 10)

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(max_epochs=5, patience=6)
        with pytest.raises(ValueError):
            TrainConfig(trials=0)
        with pytest.raises(ValueError):
            SearchSpace(p_high=())

    def test_search_points(self):
        s = SearchSpace(p_high=(8, 16), k=(1,), centrality=("degree", "pagerank"))
        assert s.points() == [(8, 1, "degree"), (8, 1, "pagerank"), (16, 1, "degree"), (16, 1, "pagerank")]
        assert len(SearchSpace().points()) == 4 * 7 * 5


class TestTrainOne:
    def test_constant_labels(self, data):
        constant = [GraphSample(s.graph, s.features, 0) for s in data]
        cfg = replace(SMALL, max_epochs=30, patience=30)
        r = train_one(cfg, GCN, constant, seed=0)
        assert r.test_accuracy == 1.0 and r.val_accuracy == 1.0

    def test_patience_zero(self, data):
        cfg = replace(SMALL, max_epochs=50, patience=0)
        r = train_one(cfg, GCN, data, seed=0)
        # stops on the first epoch that does not improve
        assert r.epochs_run == r.best_val_epoch + 2 or r.epochs_run == 50

    def test_epoch_budget(self, data):
        r = train_one(replace(SMALL, max_epochs=3, patience=3), GCN, data, seed=0)
        assert r.epochs_run <= 3
        assert 0 <= r.best_val_epoch < r.epochs_run

    def test_deterministic(self, data):
        a = train_one(SMALL, PANDA, data, seed=5)
        b = train_one(SMALL, PANDA, data, seed=5)
        assert a == b

    def test_test_split_read_once(self, data):
        split = DataSplit.from_dataset(data, 0)
        train_one(SMALL, GCN, data, 0, split=split)
        assert split.test_reads == 1
        split2 = DataSplit.from_dataset(data, 0)
        r = train_one(SMALL, GCN, data, 0, split=split2, evaluate_test=False)
        assert split2.test_reads == 0 and r.test_accuracy is None

    def test_empty_split(self, data):
        with pytest.raises(SizeError):
            train_one(SMALL, GCN, data[:3], 0)

    def test_return_params_and_timing(self, data):
        r, params = train_one(SMALL, GCN, data, 0, timing=True, return_params=True)
        assert r.wall_time is not None and r.wall_time >= 0
        assert "wall_time" in r.to_dict()
        assert "head.weight" in params
        assert "wall_time" not in train_one(SMALL, GCN, data, 0).to_dict()


class TestTrials:
    def test_confidence_interval_examples(self):
        m, h = confidence_interval([0.8, 0.8, 0.8])
        assert str(TrialSummary(m, h, ())) == "0.800 ± 0.000"
        m, h = confidence_interval([0.6, 1.0])
        assert m == pytest.approx(0.8)
        assert h == pytest.approx(1.96 * np.std([0.6, 1.0], ddof=1) / np.sqrt(2))
        assert h == pytest.approx(0.392)
        _, h80 = confidence_interval([0.6, 1.0], level=0.8)
        assert h80 == pytest.approx(1.2815515655 * 0.2, rel=1e-8)

    def test_single_value(self):
        with pytest.raises(SizeError):
            confidence_interval([0.5])

    def test_run_trials(self, data):
        seen = []
        summary = run_trials(SMALL, GCN, data, on_result=seen.append)
        assert [r.trial_seed for r in summary.results] == [0, 1]
        assert seen == list(summary.results)
        mean, half = confidence_interval([r.test_accuracy for r in summary.results])
        assert (summary.mean, summary.half_width) == (mean, half)
        with pytest.raises(SizeError):
            run_trials(SMALL, GCN, data, trials=1)

    def test_trial_order_does_not_matter(self, data):
        cache = {}
        forward = [train_one(SMALL, PANDA, data, s, cache=cache) for s in (0, 1, 2)]
        backward = [train_one(SMALL, PANDA, data, s, cache={}) for s in (2, 1, 0)]
        assert forward == backward[::-1]


class TestGrid:
    def test_singleton(self, data):
        res = grid_search(SearchSpace((12,), (2,), ("degree",)), SMALL, data, PANDA)
        assert res.best == (12, 2, "degree")
        assert len(res.rows) == 1

    def test_never_reads_test(self, data):
        split = DataSplit.from_dataset(data, SMALL.seed)
        grid_search(SearchSpace((10, 12), (1, 2), ("degree", "betweenness")), SMALL, data, PANDA, split=split)
        assert split.test_reads == 0

    def test_tie_prefers_smaller_p_high(self, data):
        # constant labels make every point reach validation accuracy 1
        constant = [GraphSample(s.graph, s.features, 1) for s in data]
        cfg = replace(SMALL, max_epochs=20, patience=20)
        res = grid_search(SearchSpace((16, 12), (3, 1), ("pagerank", "degree")), cfg, constant, PANDA)
        assert all(r["val_accuracy"] == 1.0 for r in res.rows)
        assert res.best == (12, 1, "degree")

    def test_trial_result_dict(self):
        r = TrialResult(3, 2, 0.5, 0.25, 7)
        assert r.to_dict() == {"trial_seed": 3, "best_val_epoch": 2, "val_accuracy": 0.5,
                               "test_accuracy": 0.25, "epochs_run": 7}
