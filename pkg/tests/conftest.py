import numpy as np
import pytest

from sawnet import frontend, models
from sawnet.wavio import encode_wav


def sine_clip(freq_hz: float, duration_s: float, sample_rate: int = 16000,
              amplitude: float = 0.5, source_id: str = "sine") -> frontend.AudioClip:
    t = np.arange(int(duration_s * sample_rate)) / sample_rate
    samples = (amplitude * np.sin(2 * np.pi * freq_hz * t)).astype(np.float32)
    return frontend.AudioClip(samples=samples, sample_rate=sample_rate, source_id=source_id)


def silence_clip(duration_s: float, sample_rate: int = 16000,
                 source_id: str = "silence") -> frontend.AudioClip:
    n = int(duration_s * sample_rate)
    return frontend.AudioClip(samples=np.zeros(n, np.float32), sample_rate=sample_rate,
                              source_id=source_id)


def random_bn_stats(bundle: models.WeightBundle, seed: int = 0) -> models.WeightBundle:
    """Give every batch-norm layer non-trivial running statistics."""
    rng = np.random.default_rng(seed)
    for key in list(bundle.params):
        if key.endswith("/mean") or key.endswith("/beta"):
            bundle.params[key] = rng.normal(0, 0.5, bundle.params[key].shape).astype(np.float32)
        elif key.endswith("/var"):
            bundle.params[key] = rng.uniform(0.2, 2.0, bundle.params[key].shape).astype(np.float32)
        elif key.endswith("/gamma"):
            bundle.params[key] = rng.uniform(0.5, 1.5, bundle.params[key].shape).astype(np.float32)
    bundle.validate()
    return bundle


def random_patch(seed: int = 0) -> frontend.LogMelPatch:
    rng = np.random.default_rng(seed)
    return frontend.LogMelPatch(values=rng.normal(0, 1, (96, 64)))


@pytest.fixture(scope="session")
def aug_bundle_small():
    """Random aug_vggish bundle with 4 classes and non-trivial BN stats."""
    bundle = models.init_bundle(models.build_aug_vggish(4), init="random", seed=11)
    return random_bn_stats(bundle, seed=12)


@pytest.fixture(scope="session")
def fcn_bundle_small():
    bundle = models.init_bundle(models.build_fcn_vggish(3), init="random", seed=21)
    return random_bn_stats(bundle, seed=22)


@pytest.fixture()
def wav_file(tmp_path):
    def _make(name: str, samples: np.ndarray, sample_rate: int = 16000, fmt: str = "pcm16"):
        path = tmp_path / name
        path.write_bytes(encode_wav(samples, sample_rate, fmt=fmt))
        return path

    return _make
