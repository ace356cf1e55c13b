"""Federated rounds: client training, aggregation, determinism, metrics IO."""

import numpy as np
import pytest

from fedsc.data import PartitionConfig, generate_gaussian_blobs, split_holdout
from fedsc.errors import InvalidArgumentError, MalformedCsvError
from fedsc.federation import (
    CSV_HEADER,
    FederationConfig,
    RoundMetrics,
    aggregate_models,
    read_metrics_csv,
    rounds_to_accuracy,
    run_client,
    run_experiment,
    write_metrics_csv,
    write_run_metadata,
)
from fedsc.model import OptimizerConfig, forward_features, init_params
from fedsc.prototypes import prototypes_from_features


def small_config(**overrides):
    defaults = dict(
        rounds=2,
        num_clients=4,
        local_epochs=1,
        neighbors=1,
        seed=3,
        hidden_dim=8,
        feature_dim=6,
        optimizer=OptimizerConfig(batch_size=16),
    )
    defaults.update(overrides)
    return FederationConfig(**defaults)


def small_dataset(seed=0):
    return generate_gaussian_blobs(3, 40, 4, 3.0, seed=seed)


def small_partition(**overrides):
    defaults = dict(scheme="dirichlet", num_clients=4, alpha=0.5, seed=3)
    defaults.update(overrides)
    return PartitionConfig(**defaults)


class TestFederationConfig:
    def test_validation(self):
        for bad in (
            dict(rounds=0),
            dict(num_clients=0),
            dict(local_epochs=0),
            dict(participation_fraction=0.0),
            dict(participation_fraction=1.5),
            dict(neighbors=-1),
            dict(temperature=0.0),
            dict(algorithm="fedprox"),
            dict(cpdr_norm="linf"),
            dict(threads=0),
        ):
            with pytest.raises(InvalidArgumentError):
                FederationConfig(**bad)


class TestRunClient:
    def client_fixture(self):
        from fedsc.data import partition_dirichlet

        ds = small_dataset()
        return partition_dirichlet(ds, 2, alpha=10.0, seed=0)[0]

    def test_deterministic_per_round_and_client(self):
        client = self.client_fixture()
        config = small_config(num_clients=2)
        params = init_params(4, 8, 6, 3, seed=0)
        a = run_client(params, client, config, round_index=1)
        b = run_client(params, client, config, round_index=1)
        c = run_client(params, client, config, round_index=2)
        assert np.array_equal(a.params.flat(), b.params.flat())
        assert not np.array_equal(a.params.flat(), c.params.flat())

    def test_prototypes_come_from_final_extractor(self):
        client = self.client_fixture()
        config = small_config(num_clients=2)
        params = init_params(4, 8, 6, 3, seed=0)
        update = run_client(params, client, config, round_index=1)
        z = forward_features(update.params, client.features).z
        expected = prototypes_from_features(z, client.labels, 3,
                                            owner=client.client_id)
        assert np.allclose(update.prototypes.vectors, expected.vectors)
        assert np.array_equal(update.prototypes.present, expected.present)

    def test_ce_only_without_prototypes(self):
        client = self.client_fixture()
        config = small_config(num_clients=2, algorithm="fedsc")
        params = init_params(4, 8, 6, 3, seed=0)
        update = run_client(params, client, config, round_index=1)
        assert update.rpcl == 0.0 and update.cpdr == 0.0
        assert update.total == pytest.approx(update.ce, abs=1e-12)

    def test_global_params_not_mutated(self):
        client = self.client_fixture()
        config = small_config(num_clients=2)
        params = init_params(4, 8, 6, 3, seed=0)
        frozen = params.flat().copy()
        run_client(params, client, config, round_index=1)
        assert np.array_equal(params.flat(), frozen)


class TestAggregateModels:
    def test_identical_models_reproduced_bitwise(self):
        params = init_params(4, 8, 6, 3, seed=1)
        merged = aggregate_models([(params, 10), (params.copy(), 30)])
        assert np.array_equal(merged.flat(), params.flat())

    def test_weighted_mean(self):
        a = init_params(3, 4, 3, 2, seed=0)
        b = init_params(3, 4, 3, 2, seed=1)
        merged = aggregate_models([(a, 1), (b, 3)])
        assert np.allclose(merged.w1, 0.25 * a.w1 + 0.75 * b.w1)
        assert np.allclose(merged.c, 0.25 * a.c + 0.75 * b.c)

    def test_momentum_reset(self):
        a = init_params(3, 4, 3, 2, seed=0)
        a.momentum["w1"] += 5.0
        merged = aggregate_models([(a, 1)])
        assert (merged.momentum["w1"] == 0).all()

    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            aggregate_models([])
        params = init_params(3, 4, 3, 2, seed=0)
        with pytest.raises(InvalidArgumentError):
            aggregate_models([(params, 0)])


class TestRunExperiment:
    def test_metrics_shape_and_state(self):
        result = run_experiment(small_config(), small_dataset(), small_partition())
        assert len(result.metrics) == 2
        assert [m.round for m in result.metrics] == [1, 2]
        assert result.state.round_index == 2
        assert 0.0 <= result.metrics[-1].accuracy <= 1.0
        assert result.state.collaboration is not None

    def test_round_one_algorithm_invariance(self):
        # no prototypes exist during round 1, so both algorithms train CE-only
        ds = small_dataset()
        runs = {}
        for alg in ("fedavg", "fedsc"):
            config = small_config(rounds=1, algorithm=alg)
            runs[alg] = run_experiment(config, ds, small_partition())
        assert np.array_equal(
            runs["fedavg"].state.params.flat(),
            runs["fedsc"].state.params.flat(),
        )
        assert runs["fedavg"].metrics[0].accuracy == runs["fedsc"].metrics[0].accuracy

    def test_seed_determinism(self):
        ds = small_dataset()
        a = run_experiment(small_config(), ds, small_partition())
        b = run_experiment(small_config(), ds, small_partition())
        assert np.array_equal(a.state.params.flat(), b.state.params.flat())
        assert [m.accuracy for m in a.metrics] == [m.accuracy for m in b.metrics]

    def test_threads_do_not_change_results(self):
        ds = small_dataset()
        serial = run_experiment(small_config(rounds=3), ds, small_partition())
        pooled = run_experiment(small_config(rounds=3, threads=4), ds,
                                small_partition())
        assert np.array_equal(serial.state.params.flat(),
                              pooled.state.params.flat())
        for a, b in zip(serial.metrics, pooled.metrics):
            assert (a.accuracy, a.loss_total, a.loss_ce, a.loss_rpcl, a.loss_cpdr) \
                == (b.accuracy, b.loss_total, b.loss_ce, b.loss_rpcl, b.loss_cpdr)

    def test_partial_participation_keeps_stale_reports(self):
        config = small_config(rounds=3, participation_fraction=0.5,
                              algorithm="fedsc")
        result = run_experiment(config, small_dataset(), small_partition())
        # two clients train per round; earlier reports stay on the server
        assert len(result.state.latest_prototypes) >= 2
        assert result.state.collaboration is not None

    def test_explicit_test_set_is_used(self):
        ds = small_dataset()
        train, test = split_holdout(ds, 0.5, seed=0)
        result = run_experiment(small_config(), train, small_partition(), test=test)
        assert result.test is test

    def test_client_count_mismatch_rejected(self):
        with pytest.raises(InvalidArgumentError):
            run_experiment(small_config(num_clients=5), small_dataset(),
                           small_partition(num_clients=4))

    def test_fedavg_ignores_prototypes(self):
        config = small_config(rounds=2, algorithm="fedavg")
        result = run_experiment(config, small_dataset(), small_partition())
        assert all(m.loss_rpcl == 0.0 and m.loss_cpdr == 0.0
                   for m in result.metrics)


class TestRoundsToAccuracy:
    def rows(self, accs):
        return [RoundMetrics(i + 1, a, 0, 0, 0, 0, 0) for i, a in enumerate(accs)]

    def test_first_hit(self):
        assert rounds_to_accuracy(self.rows([0.1, 0.5, 0.9, 0.95]), 0.9) == 3

    def test_none_when_never_reached(self):
        assert rounds_to_accuracy(self.rows([0.1, 0.2]), 0.9) is None

    def test_invariant_to_appended_rounds(self):
        base = self.rows([0.1, 0.8, 0.92])
        extended = self.rows([0.1, 0.8, 0.92, 0.99, 1.0])
        assert rounds_to_accuracy(base, 0.9) == rounds_to_accuracy(extended, 0.9)


class TestMetricsCsv:
    def test_roundtrip(self, tmp_path):
        metrics = [
            RoundMetrics(1, 0.5, 1.25, 1.0, 0.125, 0.125, 12.5),
            RoundMetrics(2, 0.75, 0.5, 0.25, 0.125, 0.125, 13.0),
        ]
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, metrics)
        back = read_metrics_csv(path)
        assert back == metrics

    def test_header_and_layout(self, tmp_path):
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, [RoundMetrics(1, 0.5, 1, 1, 0, 0, 3.0)])
        lines = path.read_text().splitlines()
        assert lines[0].split(",") == CSV_HEADER
        assert lines[1] == "1,0.500000,1.000000,1.000000,0.000000,0.000000,3.000000"

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "metrics.csv"
        path.write_text("round,acc\n1,0.5\n")
        with pytest.raises(MalformedCsvError):
            read_metrics_csv(path)

    def test_malformed_rows_rejected(self, tmp_path):
        path = tmp_path / "metrics.csv"
        header = ",".join(CSV_HEADER)
        path.write_text(f"{header}\n1,0.5\n")
        with pytest.raises(MalformedCsvError):
            read_metrics_csv(path)
        path.write_text(f"{header}\n1,x,1,1,0,0,3\n")
        with pytest.raises(MalformedCsvError):
            read_metrics_csv(path)


class TestRunMetadata:
    def test_flat_key_value_lines(self, tmp_path):
        path = tmp_path / "meta.txt"
        write_run_metadata(path, {"seed": 3, "algorithm": "fedsc"})
        assert path.read_text() == "seed=3\nalgorithm=fedsc\n"
