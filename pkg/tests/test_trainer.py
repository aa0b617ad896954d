import math
import os
from dataclasses import replace

import numpy as np
import pytest

import oracles
from conftest import tiny_features, tiny_model_config
from gazebed import autodiff as ad
from gazebed.model import CrossmodalNet, ModelConfig
from gazebed.optim import Adam
from gazebed.synthetic import SynthConfig, generate
from gazebed.trainer import (
    FeatureSet, NonFiniteLossError, Standardizer, TrainConfig, compute_losses, fit_standardizer,
    load_checkpoint, make_batch, prepare_features, save_checkpoint, subsample_frames, train, train_step, write_metrics_log,
)


def _fs(rng, n=4, V=3, M=5, labels=None, gaze=True):
    lens = rng.integers(2, 5, n)
    return FeatureSet(
        [f"u{i}" for i in range(n)],
        np.arange(n) % 2 if labels is None else labels,
        rng.normal(size=(n, M)),
        [rng.normal(size=(k, V)) for k in lens],
        rng.normal(size=(n, 103)) if gaze else None,
        "averaged" if gaze else "none",
    )


# -- standardizer -----------------------------------------------------------------

def test_standardized_moments(rng):
    fs = _fs(rng, n=9)
    fs.audio = rng.normal(3.0, 4.0, size=fs.audio.shape)
    out = fit_standardizer(fs).transform(fs)
    for X in (out.audio, np.vstack(out.visual), out.gaze):
        np.testing.assert_allclose(X.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(X.std(axis=0), 1.0, atol=1e-9)


def test_constant_dimension_gets_unit_scale(rng):
    fs = _fs(rng, n=5)
    fs.audio[:, 2] = 7.0
    std = fit_standardizer(fs)
    assert std.mean_["audio"][2] == 7.0 and std.scale_["audio"][2] == 1.0
    np.testing.assert_array_equal(std.transform(fs).audio[:, 2], 0.0)


def test_visual_stats_pool_frames(rng):
    fs = _fs(rng, n=3)
    np.testing.assert_allclose(fit_standardizer(fs).mean_["visual"], np.vstack(fs.visual).mean(axis=0))


def test_poisoned_validation_leaves_statistics(tmp_path):
    train_fs, val_fs = tiny_features(1)
    poisoned = replace(val_fs, audio=val_fs.audio * 1e6, visual=[v + 1e3 for v in val_fs.visual])
    cfg = TrainConfig(batch_size=8, epochs=1, lr=1e-3)
    a = train(train_fs, val_fs, tiny_model_config(train_fs), cfg).model.standardizer
    b = train(train_fs, poisoned, tiny_model_config(train_fs), cfg).model.standardizer
    for k in a.mean_:
        np.testing.assert_array_equal(a.mean_[k], b.mean_[k])
        np.testing.assert_array_equal(a.scale_[k], b.scale_[k])


def test_empty_split_rejected(rng):
    with pytest.raises(ValueError):
        Standardizer().fit(_fs(rng).subset([]))


# -- losses -------------------------------------------------------------------------

def _ce(logits, y):
    return [-(l[t] - math.log(sum(math.exp(v) for v in l))) for l, t in zip(logits, y)]


def test_monomodal_audio_loss_is_audio_ce(rng):
    fs = _fs(rng)
    net = CrossmodalNet(tiny_model_config(fs), seed=3)
    batch = make_batch(fs)
    total, comp = compute_losses(net, batch, TrainConfig(mode="monomodal_audio", triplet_weight=0.0))
    want = np.mean(_ce(net.logits(net.embed_audio(fs.audio)).data, fs.labels))
    assert total.item() == pytest.approx(want, abs=1e-12)
    assert set(comp) == {"ce_audio", "total"}


@pytest.mark.parametrize("reduction", ["mean", "sum"])
def test_four_utterance_loss_matches_oracles(rng, reduction):
    fs = _fs(rng, labels=np.array([0, 1, 0, 1]))
    net = CrossmodalNet(tiny_model_config(fs), seed=4)
    batch = make_batch(fs)
    cfg = TrainConfig(triplet_weight=0.7, margin=0.5, reduction=reduction)
    total, comp = compute_losses(net, batch, cfg)

    ea = net.embed_audio(fs.audio).data
    # unpadded, one utterance at a time
    ev = np.vstack([net.embed_visual(v[None], None, g[None]).data for v, g in zip(fs.visual, fs.gaze)])
    y = fs.labels
    ce = sum(_ce(net.logits(ea).data, y)) + sum(_ce(net.logits(ev).data, y))
    trip = (oracles.triplet_sum(ea, ea, y, y, True, 0.5) + oracles.triplet_sum(ev, ev, y, y, True, 0.5)
            + oracles.triplet_sum(ea, ev, y, y, False, 0.5))
    want = ce + 0.7 * trip
    if reduction == "mean":
        want /= 4
    assert total.item() == pytest.approx(want, abs=1e-9)
    assert comp["triplet"] == pytest.approx(trip, abs=1e-9)


def test_non_finite_loss_aborts(rng):
    fs = _fs(rng)
    net = CrossmodalNet(tiny_model_config(fs), seed=0)
    net.params["head.b"].data[0] = np.inf
    with pytest.raises(NonFiniteLossError):
        compute_losses(net, make_batch(fs), TrainConfig())


@pytest.mark.parametrize("mode,frozen", [("monomodal_audio", ("visual", "gaze", "proj")),
                                         ("monomodal_visual", ("audio",))])
def test_monomodal_never_touches_absent_stream(rng, mode, frozen):
    fs = _fs(rng, n=6)
    net = CrossmodalNet(tiny_model_config(fs), seed=1)
    before = net.state_dict()
    cfg = TrainConfig(mode=mode, lr=0.05)
    opt = Adam(net.parameters_for(mode), lr=cfg.lr, weight_decay=cfg.weight_decay)
    for _ in range(3):
        train_step(fs, net, opt, cfg)
    after = net.state_dict()
    for name in before:
        if name.split(".")[0] in frozen:
            np.testing.assert_array_equal(after[name], before[name])
        else:
            assert not np.array_equal(after[name], before[name])


def test_alternating_steps_twice(rng):
    fs = _fs(rng, n=6)
    net = CrossmodalNet(tiny_model_config(fs), seed=1)
    opt = Adam(net.parameters_for("crossmodal"), lr=1e-3)
    comp = train_step(fs, net, opt, TrainConfig(alternate=True))
    assert opt.state.t == 2
    assert {"ce_audio", "ce_visual", "triplet", "total"} <= set(comp)


def test_duplicate_batch_recomputes_identically(rng):
    fs = _fs(rng)
    net = CrossmodalNet(tiny_model_config(fs), seed=2)
    a = compute_losses(net, make_batch(fs), TrainConfig())[1]
    b = compute_losses(net, make_batch(fs), TrainConfig())[1]
    assert a == b


def test_padding_does_not_change_embeddings(rng):
    fs = _fs(rng, gaze=False)
    net = CrossmodalNet(tiny_model_config(fs), seed=5)
    b = make_batch(fs)
    padded = net.embed_visual(b.visual, b.mask).data
    for i, v in enumerate(fs.visual):
        np.testing.assert_allclose(padded[i], net.embed_visual(v[None]).data[0], atol=1e-14)


def test_subsample_frames():
    np.testing.assert_array_equal(subsample_frames(5, None), np.arange(5))
    np.testing.assert_array_equal(subsample_frames(9, 3), [0, 4, 8])


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(mode="trimodal")


# -- training loop ------------------------------------------------------------------

def test_zero_epochs_gives_initial_model():
    tr, va = tiny_features(0)
    res = train(tr, va, tiny_model_config(tr), TrainConfig(epochs=0, seed=9))
    assert res.log == []
    fresh = CrossmodalNet(tiny_model_config(tr), seed=9)
    for name, p in res.model.net.params.items():
        np.testing.assert_array_equal(p.data, fresh.params[name].data)


def test_training_is_deterministic(tmp_path):
    tr, va = tiny_features(2)
    cfg = TrainConfig(batch_size=8, epochs=3, lr=1e-3, seed=4)
    logs = []
    for name in ("a.csv", "b.csv"):
        res = train(tr, va, tiny_model_config(tr), cfg)
        write_metrics_log(tmp_path / name, res.log, ["hdr"])
        logs.append((tmp_path / name).read_bytes())
    assert logs[0] == logs[1]
    other = train(tr, va, tiny_model_config(tr), replace(cfg, seed=5))
    assert other.log != res.log


def test_log_rows_and_best_epoch():
    tr, va = tiny_features(3)
    res = train(tr, va, tiny_model_config(tr), TrainConfig(batch_size=8, epochs=4, lr=1e-2))
    assert [r["epoch"] for r in res.log if r["split"] == "train"] == [1, 2, 3, 4]
    assert {r["modality"] for r in res.log if r["split"] == "validation"} == {"audio", "video"}
    val = [r for r in res.log if r["split"] == "validation"]
    means = [(a["micro_f1"] + v["micro_f1"]) / 2 for a, v in zip(val[::2], val[1::2])]
    assert res.best_epoch == 1 + int(np.argmax(means))
    # best parameters are restored
    preds_a = res.model.predict_features(va, "audio")
    assert np.mean(preds_a == va.labels) == pytest.approx(val[2 * (res.best_epoch - 1)]["micro_f1"])


def test_checkpoint_round_trip(tmp_path):
    tr, va = tiny_features(4, gaze_mode="windowed")
    res = train(tr, va, tiny_model_config(tr, fusion_mode="early"), TrainConfig(batch_size=8, epochs=2, lr=1e-2))
    save_checkpoint(tmp_path / "m.npz", res.model, {"note": "x"})
    save_checkpoint(tmp_path / "m2.npz", res.model, {"note": "x"})
    assert (tmp_path / "m.npz").read_bytes() == (tmp_path / "m2.npz").read_bytes()
    loaded = load_checkpoint(tmp_path / "m.npz")
    assert loaded.header == {"note": "x"}
    assert loaded.config == res.model.config
    assert loaded.train_config == res.model.train_config
    for m in ("audio", "video"):
        np.testing.assert_array_equal(loaded.predict_proba_features(va, m), res.model.predict_proba_features(va, m))


def test_loading_foreign_file_fails(tmp_path):
    np.savez(tmp_path / "x.npz", meta=np.array('{"format": "other"}'))
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.npz")
    assert os.path.exists(tmp_path / "x.npz")


def test_training_loss_decreases_early():
    """Mean train loss falls monotonically over epochs 1..5 in at least 9 of 10 seeds."""
    tr = prepare_features(generate(SynthConfig()).train, "averaged")
    mc = ModelConfig(visual_dim=tr.visual[0].shape[1], embedding_dim=32, classifier_hidden=32)
    ok = 0
    for seed in range(10):
        res = train(tr, None, mc, TrainConfig(epochs=5, lr=1e-3, seed=seed))
        losses = [r["total"] for r in res.log]
        ok += all(b < a for a, b in zip(losses, losses[1:]))
    assert ok >= 9
