import pytest
import yaml

from projective_sgd import config as C


def test_defaults_are_filled():
    cfg = C.parse_config({"data": {"d": 3000}})
    assert cfg.sgd.record_stride == 30
    assert cfg.model.name == "logistic" and cfg.data.noise == "gaussian"
    assert C.parse_config({"data": {"d": 50}}).sgd.record_stride == 1


def test_explicit_stride_is_kept():
    assert C.parse_config({"sgd": {"record_stride": 7}}).sgd.record_stride == 7


def test_effective_config_round_trip_is_idempotent(tmp_path):
    src = {"model": {"name": "two_layer", "k1": 4}, "data": {"d": 400, "noise": "rademacher"},
           "sgd": {"T": 2.0, "replicas": 3}, "sde": {"T": 2.0, "dt": 0.001}}
    first = C.dump_config(C.parse_config(src))
    p = tmp_path / "eff.yaml"
    p.write_text(first)
    second = C.dump_config(C.load_config(p))
    assert first == second
    assert yaml.safe_load(second)["sgd"]["record_stride"] == 4


@pytest.mark.parametrize("raw, field", [
    ({"sgd": {"c_lr": 1.0, "learning": 2}}, "sgd.learning"),
    ({"bogus": 1}, "bogus"),
    ({"data": {"noise": "cauchy"}}, "data.noise"),
    ({"data": {"mixture": "custom", "means": [{"recipe": "flat"}, {"recipe": "zero"}],
               "weights": [0.6, 0.6]}}, "data.weights"),
    ({"sgd": {"c_lr": -1}}, "sgd.c_lr"),
    ({"sde": {"T": 1.0, "dt": 0.01}}, "dt"),
    ({"model": {"name": "two_layer", "k1": 3, "num_classes": 2}}, "model.k1"),
    ({"data": {"means": [{"recipe": "flat"}]}}, "means"),
])
def test_errors_name_the_field(raw, field):
    with pytest.raises(C.ConfigError) as exc:
        C.parse_config(raw)
    assert field in str(exc.value)


def test_unknown_distribution_message():
    with pytest.raises(C.ConfigError, match="unknown distribution 'cauchy'"):
        C.parse_config({"data": {"noise": "cauchy"}})


def test_weights_must_sum_to_one_message():
    with pytest.raises(C.ConfigError, match="sum to 1"):
        C.parse_config({"data": {"mixture": "symmetric", "weights": [0.2, 0.2]}})


def test_yaml_syntax_error_reports_line(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("model:\n  name: logistic\n  k1: [1, 2\n")
    with pytest.raises(C.ConfigError, match=r"line \d+, column \d+"):
        C.load_config(p)


def test_missing_file_and_non_mapping(tmp_path):
    with pytest.raises(C.ConfigError, match="no such file"):
        C.load_config(tmp_path / "nope.yaml")
    p = tmp_path / "list.yaml"
    p.write_text("- 1\n- 2\n")
    with pytest.raises(C.ConfigError, match="mapping"):
        C.load_config(p)


def test_builders_produce_consistent_objects():
    cfg = C.parse_config({"model": {"name": "he3_he2"}, "data": {"d": 64, "mixture": "centered"}})
    model = C.build_model(cfg)
    spec = C.build_mixture(cfg, model)
    teacher = C.build_teacher(cfg, model)
    assert spec.d == 64 and spec.means.shape == (1, 64)
    assert teacher.shape == (64, model.k_frozen)
    assert abs((teacher[:, 0] ** 2).sum() - 1.0) < 1e-12


def test_custom_mixture_labels_and_weights():
    cfg = C.parse_config({"data": {"d": 20, "mixture": "custom",
                                   "means": [{"recipe": "flat"}, {"recipe": "coordinate_e1", "norm": 2.0}],
                                   "weights": [0.25, 0.75], "labels": [1, 0]}})
    model = C.build_model(cfg)
    spec = C.build_mixture(cfg, model)
    assert list(spec.labels) == [1, 0] and list(spec.weights) == [0.25, 0.75]
    assert abs(spec.means[1] @ spec.means[1] - 4.0) < 1e-12
