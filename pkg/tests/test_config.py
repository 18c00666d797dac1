import pytest

from gapfuse.config import RunConfig, config_from_pairs, load_config
from gapfuse.errors import ConfigurationError


def test_defaults():
    cfg = RunConfig()
    assert (cfg.epochs, cfg.batch_size, cfg.model_kind, cfg.dropout) == (30, 64, "early", 0.0)
    assert cfg.align.noise_std == 0.01 and cfg.align.lambda_shift == 0.0
    assert cfg.optim.lr == 1e-3 and cfg.optim.weight_decay == 1e-2


def test_file_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\ndata.manifest = data/manifest.txt\nmodel.kind = late_joint\n"
                 "align.lambda_shift = 0.4\ntrain.epochs = 5\n")
    cfg = load_config(str(p), {"train.epochs": "7", "align.renormalize": "false"})
    assert cfg.model_kind == "late_joint"
    assert cfg.epochs == 7
    assert cfg.align.lambda_shift == 0.4 and cfg.align.renormalize is False
    assert cfg.manifest == str(tmp_path / "data" / "manifest.txt")


def test_round_trip_pairs():
    cfg = config_from_pairs({"synth.preset": "general", "synth.n_samples": "300", "optim.lr": "0.01",
                             "train.seed": "4"})
    again = config_from_pairs({k: str(v) for k, v in cfg.to_pairs().items()})
    assert again == cfg
    assert cfg.synth_spec().n_samples == 300


@pytest.mark.parametrize("pairs,match", [
    ({"train.epochs": "ten"}, "train.epochs"),
    ({"model.kind": "middle"}, "model.kind"),
    ({"train.batch_size": "1"}, "batch_size"),
    ({"nonsense.key": "1"}, "nonsense.key"),
    ({"synth.bogus": "1"}, "synth.bogus"),
    ({"data.manifest": "a", "synth.preset": "medical"}, "either"),
])
def test_errors_name_the_key(pairs, match):
    with pytest.raises(ConfigurationError, match=match):
        config_from_pairs(pairs)


def test_no_dataset():
    with pytest.raises(ConfigurationError, match="dataset"):
        RunConfig().load_dataset()
