import json
from pathlib import Path

import numpy as np
import pytest
import tomli

from trn_ood import cli, dataio
from trn_ood.harness import (ConfigError, ExperimentConfig, cmd_eval,
                             cmd_gen_shifts, cmd_train, config_from_dict,
                             graph_hash, parse_config, split_masks)
from trn_ood.rng import Rng
from trn_ood.synth import make_class_graph

CONFIG_TEMPLATE = """\
name = "toy"
seeds = [0, 1]

[dataset]
features = "data/features.npy"
edges = "data/edges.npy"
labels = "data/labels.npy"
num_classes = 3

[masks]
train_fraction = 0.6
val_fraction = 0.2
seed = 0

[model]
d_p = 8
r = 2
epochs = 15
lr = 0.05
lam = 0.5
tau = 0.1

[gcn]
hidden = 16
epochs = 15
lr = 0.05

[output]
dir = "out"

[[shifts]]
kind = "FeatureMix"
alpha_feat = 0.9

[[shifts]]
kind = "LabelLeaveOut"
ood_classes = [2]

[[methods]]
name = "energy"

[[methods]]
name = "energy"
K = 3
alpha = 0.5

[[methods]]
name = "msp"

[[methods]]
name = "mahalanobis"

[[methods]]
name = "elign"
K = 3
alpha = 0.5
T = 1.0
"""


def write_experiment(root: Path, template: str = CONFIG_TEMPLATE) -> Path:
    g = make_class_graph(36, 5, 3, Rng(0, "harness/data"), p_in=0.35, p_out=0.05)
    data = root / "data"
    dataio.save_npy(data / "features.npy", g.features)
    dataio.save_npy(data / "edges.npy", g.edges)
    dataio.save_npy(data / "labels.npy", g.labels)
    cfg_path = root / "exp.toml"
    cfg_path.write_text(template)
    return cfg_path


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(Path(root).rglob("*")) if p.is_file()}


class TestConfig:
    def test_parse_and_hash(self, tmp_path):
        cfg = parse_config(write_experiment(tmp_path))
        assert cfg.name == "toy"
        assert len(cfg.shifts) == 2 and len(cfg.methods) == 5
        assert len(cfg.config_hash()) == 16

    def test_roundtrip_is_fixed_point(self, tmp_path):
        cfg = parse_config(write_experiment(tmp_path))
        dumped = cfg.to_toml()
        cfg2 = config_from_dict(tomli.loads(dumped))
        assert cfg2.canonical_dict() == cfg.canonical_dict()
        assert cfg2.config_hash() == cfg.config_hash()
        dumped2 = cfg2.to_toml()
        assert config_from_dict(tomli.loads(dumped2)).canonical_dict() == \
            cfg.canonical_dict()

    def test_hash_ignores_output_dir(self, tmp_path):
        cfg = parse_config(write_experiment(tmp_path))
        h1 = cfg.config_hash()
        cfg.out_dir = "elsewhere"
        assert cfg.config_hash() == h1

    def test_missing_file_is_config_error(self, tmp_path):
        path = write_experiment(tmp_path)
        (tmp_path / "data" / "labels.npy").unlink()
        with pytest.raises(ConfigError, match="labels"):
            parse_config(path)

    def test_unknown_method_rejected(self, tmp_path):
        path = write_experiment(tmp_path, CONFIG_TEMPLATE.replace(
            'name = "msp"', 'name = "odin"'))
        with pytest.raises(ConfigError, match="odin"):
            parse_config(path)

    def test_empty_seed_list_rejected(self, tmp_path):
        path = write_experiment(tmp_path, CONFIG_TEMPLATE.replace(
            "seeds = [0, 1]", "seeds = []"))
        with pytest.raises(ConfigError, match="seed"):
            parse_config(path)


class TestMasks:
    def test_stratified_split_partitions(self):
        g = make_class_graph(50, 4, 3, Rng(1, "masks"), p_in=0.3, p_out=0.05)
        masks = split_masks(g, {"train_fraction": 0.6, "val_fraction": 0.2,
                                "seed": 0})
        total = masks["train"].astype(int) + masks["val"].astype(int) + \
            masks["test"].astype(int)
        assert np.all(total == 1)
        assert 0.5 < masks["train"].mean() < 0.7

    def test_stratification_covers_each_class(self):
        g = make_class_graph(60, 4, 3, Rng(2, "masks2"), p_in=0.3, p_out=0.05)
        masks = split_masks(g, {"seed": 3})
        for c in range(3):
            cls = g.labels == c
            assert masks["train"][cls].any() and masks["test"][cls].any()

    def test_mask_files(self, tmp_path):
        g = make_class_graph(10, 3, 2, Rng(3, "masks3"), p_in=0.5, p_out=0.2)
        paths = {}
        for i, part in enumerate(("train", "val", "test")):
            arr = np.zeros(10, bool)
            arr[i::3] = True
            p = tmp_path / f"{part}.npy"
            dataio.save_npy(p, arr)
            paths[part] = str(p)
        masks = split_masks(g, paths)
        assert masks["train"][0] and masks["val"][1] and masks["test"][2]

    def test_deterministic(self):
        g = make_class_graph(50, 4, 3, Rng(4, "masks4"), p_in=0.3, p_out=0.05)
        a = split_masks(g, {"seed": 7})
        b = split_masks(g, {"seed": 7})
        assert np.array_equal(a["train"], b["train"])


class TestPipeline:
    @pytest.fixture
    def experiment(self, tmp_path):
        cfg_path = write_experiment(tmp_path)
        return parse_config(cfg_path), tmp_path

    def test_gen_shifts_writes_manifest_and_splits(self, experiment):
        config, root = experiment
        assert cmd_gen_shifts(config, root / "out") == 0
        manifest = json.loads((root / "out/splits/manifest.json").read_text())
        assert len(manifest["splits"]) == len(config.shifts) * len(config.seeds)
        assert manifest["config_hash"] == config.config_hash()
        first = manifest["splits"][0]
        assert (root / "out" / first["path"] / "split.json").exists()

    def test_empty_shift_list_gives_empty_manifest(self, tmp_path):
        template = CONFIG_TEMPLATE.split("[[shifts]]")[0] + \
            CONFIG_TEMPLATE[CONFIG_TEMPLATE.index("[[methods]]"):]
        config = parse_config(write_experiment(tmp_path, template))
        assert cmd_gen_shifts(config, tmp_path / "out") == 0
        manifest = json.loads((tmp_path / "out/splits/manifest.json").read_text())
        assert manifest["splits"] == []

    def test_invalid_spec_fails_that_spec_only(self, tmp_path):
        template = CONFIG_TEMPLATE.replace(
            'kind = "FeatureMix"\nalpha_feat = 0.9',
            'kind = "TemporalSplit"\nr_id = [2000, 2005]\nr_ood = [2010, 2012]')
        # graph has no years -> TemporalSplit fails, LabelLeaveOut still lands
        config = parse_config(write_experiment(tmp_path, template))
        assert cmd_gen_shifts(config, tmp_path / "out") == 2
        manifest = json.loads((tmp_path / "out/splits/manifest.json").read_text())
        assert len(manifest["failures"]) == 2  # one per seed
        assert len(manifest["splits"]) == 2

    def test_train_then_eval_produces_tables(self, experiment):
        config, root = experiment
        out = root / "out"
        assert cmd_gen_shifts(config, out) == 0
        assert cmd_train(config, out) == 0
        ckpts = sorted(p.name for p in (out / "checkpoints").glob("*.ckpt"))
        # 2 ID graphs (base + leave-out) x 2 backbones x 2 seeds
        assert len(ckpts) == 8
        assert cmd_eval(config, out) == 0
        rows = (out / "results.csv").read_text().splitlines()
        assert rows[0].startswith("# config_hash=")
        header = rows[1].split(",")
        assert header == ["dataset", "shift", "method", "auroc", "aupr",
                          "fpr95", "id_acc", "seed"]
        # (2 shifts x 2 seeds) splits x 5 methods, plus comment + header
        assert len(rows) == 2 + 2 * 2 * 5
        summary = (out / "summary.csv").read_text().splitlines()
        assert any(line.startswith("toy,ALL,") for line in summary)

    def test_eval_refuses_stale_hash_without_force(self, experiment):
        config, root = experiment
        out = root / "out"
        cmd_gen_shifts(config, out)
        cmd_train(config, out)
        config.seeds = [0]  # different config -> different hash
        with pytest.raises(ConfigError, match="gen-shifts"):
            cmd_eval(config, out)

    def test_eval_missing_checkpoint_skips_and_fails(self, experiment):
        config, root = experiment
        out = root / "out"
        cmd_gen_shifts(config, out)
        cmd_train(config, out)
        for p in (out / "checkpoints").glob("tnt_*.ckpt"):
            p.unlink()
        assert cmd_eval(config, out) == 2
        rows = (out / "results.csv").read_text().splitlines()
        assert not any(",elign" in r for r in rows)
        assert any(",energy," in r for r in rows)

    def test_energy_with_and_without_propagation_share_id_acc(self, experiment):
        config, root = experiment
        out = root / "out"
        cmd_gen_shifts(config, out)
        cmd_train(config, out)
        cmd_eval(config, out)
        payloads = [json.loads(p.read_text()) for p in (out / "eval").glob("*.json")]
        plain = {(p["split"], p["seed"]): p for p in payloads
                 if p["method"] == "energy"}
        prop = {(p["split"], p["seed"]): p for p in payloads
                if p["method"] == "energy_K3_a0p5"}
        assert plain and set(plain) == set(prop)
        for key, row in plain.items():
            assert row["metrics"]["id_acc"] == prop[key]["metrics"]["id_acc"]


class TestDeterminism:
    def test_pipeline_twice_byte_identical(self, tmp_path):
        cfg_path = write_experiment(tmp_path)
        config = parse_config(cfg_path)
        config.seeds = [0]
        trees = []
        for run in ("run_a", "run_b"):
            out = tmp_path / run
            cmd_gen_shifts(config, out)
            cmd_train(config, out)
            cmd_eval(config, out)
            trees.append(tree_bytes(out))
        assert trees[0].keys() == trees[1].keys()
        for name in trees[0]:
            assert trees[0][name] == trees[1][name], name


class TestCli:
    def test_config_error_exit_code(self, tmp_path, capsys):
        missing = tmp_path / "nope.toml"
        assert cli.main(["gen-shifts", "--config", str(missing)]) == 1
        assert "config error" in capsys.readouterr().err

    def test_gen_shifts_via_cli(self, tmp_path):
        cfg_path = write_experiment(tmp_path)
        code = cli.main(["gen-shifts", "--config", str(cfg_path),
                         "--out", str(tmp_path / "out"), "--seeds", "0"])
        assert code == 0
        manifest = json.loads((tmp_path / "out/splits/manifest.json").read_text())
        assert {e["seed"] for e in manifest["splits"]} == {0}

    def test_graph_hash_distinguishes_graphs(self):
        g1 = make_class_graph(10, 3, 2, Rng(0, "gh"), p_in=0.5, p_out=0.1)
        g2 = make_class_graph(10, 3, 2, Rng(1, "gh"), p_in=0.5, p_out=0.1)
        assert graph_hash(g1) != graph_hash(g2)
        assert graph_hash(g1) == graph_hash(g1)
