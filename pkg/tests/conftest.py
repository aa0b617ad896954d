import numpy as np
import pytest

from gazebed.ingest import FrameRecord, Utterance

N_LMK = 56


def ring_landmarks(radius=1.5, depth=500.0, centre=(-30.0, 0.0), idx=range(20, 28)):
    lmk = np.zeros((N_LMK, 3))
    lmk[:, 2] = depth
    idx = list(idx)
    ang = np.linspace(0.0, 2.0 * np.pi, len(idx), endpoint=False)
    lmk[idx, 0] = centre[0] + radius * np.cos(ang)
    lmk[idx, 1] = centre[1] + radius * np.sin(ang)
    return lmk


def make_frames(k, fps=30.0, gx=None, gy=None, blink=None, radius=None, depth=None, success=None, confidence=None):
    """Frame records with per-frame channel values; scalars broadcast."""

    def arr(v, default):
        return np.broadcast_to(np.asarray(default if v is None else v, dtype=np.float64), (k,))

    gx, gy, blink = arr(gx, 0.0), arr(gy, 0.0), arr(blink, 0.0)
    radius, depth = arr(radius, 1.5), arr(depth, 500.0)
    conf = arr(confidence, 0.95)
    ok = np.ones(k, dtype=bool) if success is None else np.asarray(success, dtype=bool)
    return [
        FrameRecord(i + 1, i / fps, float(conf[i]), bool(ok[i]), float(gx[i]), float(gy[i]),
                    ring_landmarks(radius[i], depth[i]), float(blink[i]))
        for i in range(k)
    ]


def random_frames(rng, k, fps=30.0, fail_rate=0.0):
    success = rng.random(k) >= fail_rate
    if not success.any():
        success[0] = True
    return make_frames(
        k, fps,
        gx=rng.normal(0, 0.1, k), gy=rng.normal(0, 0.1, k),
        blink=rng.uniform(0, 3, k), radius=rng.uniform(1.0, 2.5, k),
        depth=500 + np.cumsum(rng.normal(0, 1, k)), success=success,
    )


def make_utterance(frames, fps=30.0, V=4, M=6, label=0, uid="u", rng=None):
    rng = rng or np.random.default_rng(0)
    return Utterance(uid, frames, fps, rng.normal(size=(len(frames), V)), rng.normal(size=M), label)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_dataset(seed=0, per_class=6, num_classes=4, **kw):
    from gazebed.synthetic import SynthConfig, generate

    cfg = dict(num_classes=num_classes, utterances_per_class=per_class, k_range=(3, 6), visual_dim=5,
               audio_dim=6, fps=5.0, val_fraction=0.25, seed=seed)
    cfg.update(kw)
    return generate(SynthConfig(**cfg))


def tiny_features(seed=0, gaze_mode="averaged", **kw):
    from gazebed.trainer import prepare_features

    ds = tiny_dataset(seed, **kw)
    return prepare_features(ds.train, gaze_mode), prepare_features(ds.validation, gaze_mode)


def tiny_model_config(fs, **kw):
    from gazebed.model import ModelConfig

    cfg = dict(visual_dim=fs.visual[0].shape[1], audio_dim=fs.audio.shape[1], gaze_dim=103, embedding_dim=4,
               classifier_hidden=4, gaze_mode=fs.gaze_mode)
    cfg.update(kw)
    return ModelConfig(**cfg)


# -- acceptance reporting ------------------------------------------------------------

def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config._acceptance = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    detail = dict(item.user_properties).get("detail", "")
    table = item.config._acceptance
    if rep.when == "call":
        table[n] = ("PASS" if rep.passed else "FAIL", detail)
    elif rep.failed:  # setup error
        table[n] = ("FAIL", "error during setup")
    elif rep.skipped and n not in table:
        table[n] = ("SKIP", "not run")


def pytest_terminal_summary(terminalreporter, config):
    table = getattr(config, "_acceptance", {})
    if not table:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(table):
        status, detail = table[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")
