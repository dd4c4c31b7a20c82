import math
import os
import pathlib

import pytest

import mmfn

FIXTURES = pathlib.Path(os.environ.get("MMFN_FIXTURE_DIR", pathlib.Path(__file__).parents[2] / "tests" / "fixtures"))


def tiny_config(mode="full"):
    return mmfn.RunConfig.parse(
        "\n".join(
            [
                f"mode = {mode}",
                "epochs = 1",
                "micro_batch = 4",
                "accumulate = 2",
                "num_queries = 4",
                "image_side = 16",
                "patch_size = 8",
                "model_dim = 16",
                "encoder_layers = 1",
                "encoder_heads = 2",
                "lm_layers = 1",
                "lm_heads = 2",
                "context = 64",
                "vocab_size = 400",
                "max_text_tokens = 16",
                "classifier_hidden = 8",
            ]
        )
    )


@pytest.fixture(scope="module")
def dataset():
    spec = mmfn.SyntheticSpec()
    spec.num_records = 40
    spec.image_side = 16
    spec.seed = 5
    return mmfn.generate_synthetic(spec)


def test_synthetic_dataset(dataset):
    assert len(dataset) == 40
    rec = dataset.records[0]
    assert rec.image_shape == (16, 16, 3)
    assert len(rec.pixels) == 16 * 16 * 3
    assert all(0.0 <= p <= 1.0 for p in rec.pixels)
    ids = [set(dataset.split_ids(s)) for s in ("train", "val", "test")]
    assert sum(len(s) for s in ids) == 40
    assert not (ids[0] & ids[1]) and not (ids[1] & ids[2])


def test_dataset_round_trip(dataset, tmp_path):
    mmfn.write_dataset(dataset, tmp_path / "d")
    back = mmfn.load_dataset(tmp_path / "d", 16)
    assert [r.id for r in back.records] == [r.id for r in dataset.records]
    assert [r.label for r in back.records] == [r.label for r in dataset.records]


def test_loss_helpers():
    assert mmfn.info_nce([[1, 0], [0, 1]], 0.5) == pytest.approx(0.12692801104297269, abs=1e-12)
    assert mmfn.awl_combine(2, 4, 1, 2) == pytest.approx(3.791759469228055, abs=1e-12)
    assert mmfn.awl_combine(0, 0, 1, 1) == pytest.approx(2 * math.log(2), abs=1e-12)


def test_metrics_fixture():
    m = mmfn.metrics_from_csv((FIXTURES / "predictions.csv").read_text())
    assert (m["tp"], m["fp"], m["tn"], m["fn"]) == (3, 1, 4, 2)
    assert m["precision"] == pytest.approx(0.75)
    assert m["f1"] == pytest.approx(2 / 3)
    assert mmfn.metrics([1, 0], [1, 0])["accuracy"] == 1.0


def test_tokenizer_round_trip():
    vocab = mmfn.bpe_train(["a photo of a red circle", "a red square"], 300)
    text = "a red circle, then a blue cross"
    assert vocab.decode(vocab.encode(text)) == text
    assert mmfn.BpeVocab.parse(vocab.serialize()).encode(text) == vocab.encode(text)


def test_config_errors():
    with pytest.raises(mmfn.ConfigError):
        mmfn.RunConfig.parse("learning_rate = 3")
    assert tiny_config().hash() == mmfn.RunConfig.parse(tiny_config().serialize()).hash()
    assert tiny_config("expC").hash() == tiny_config("full").hash()


def test_train_save_load(dataset, tmp_path):
    res = mmfn.train(tiny_config(), dataset)
    assert res.best_epoch == 1
    assert res.trace.startswith("epoch,loss")
    path = tmp_path / "m.ckpt"
    res.model.save(path)
    loaded = mmfn.Model.load(path)
    assert loaded.config.hash() == tiny_config().hash()
    assert "qformer.queries" in loaded.parameter_names()
    assert mmfn.evaluate(loaded, dataset, "val") == mmfn.evaluate(res.model, dataset, "val")


def test_corrupt_checkpoint(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"MMFN1")
    with pytest.raises(mmfn.CorruptCheckpointError):
        mmfn.Model.load(path)


def test_gradcheck_passes():
    cases = mmfn.gradcheck(points=1, seed=3)
    assert cases and all(c["passed"] for c in cases)
