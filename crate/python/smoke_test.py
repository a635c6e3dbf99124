"""Smoke test for the Python bindings.

Build and install first, e.g. ``maturin develop --release -m crates/py/Cargo.toml``,
then run ``python python/smoke_test.py``.
"""

import math
import random
import tempfile
from pathlib import Path

import saec_py as saec


def check_stft_round_trip():
    rng = random.Random(0)
    x = [rng.uniform(-1, 1) for _ in range(16000)]
    re, im = saec.stft(x)
    assert len(re[0]) == 161
    y = saec.istft(re, im, len(x))
    err = max(abs(a - b) for a, b in zip(x[320:-320], y[320:-320]))
    assert err < 1e-6, err


def check_baselines_and_metrics():
    rirs = saec.receiving_room_rirs([4.0, 3.0, 3.0], 0.3, 0.5)
    t60 = saec.estimate_t60(rirs[0][0])
    assert 0.24 <= t60 <= 0.36, t60
    far1 = saec.speech_like(1.5, 1)
    far2 = saec.speech_like(1.5, 2)
    h1, h2 = rirs[0][0][:64], rirs[1][0][:64]
    mic = [
        sum(h1[k] * far1[n - k] + h2[k] * far2[n - k] for k in range(min(len(h1), n + 1)))
        for n in range(len(far1))
    ]
    out = saec.nlms_cancel(mic, far1, far2, filter_len=64)
    assert len(out) == len(mic) and all(math.isfinite(v) for v in out)
    db, clamped = saec.erle(mic, out)
    assert db > 0 and not clamped
    w = saec.wiener_suppress(mic, far1, far2)
    assert len(w) == len(mic)
    assert saec.erle(mic, [0.0] * len(mic)) == (100.0, True)
    s = saec.speech_like(2.0, 7)
    assert saec.estoi(s, s) > 0.99


def check_pipeline():
    cfg = saec.Config.from_toml(
        """
        [corpus]
        utterance_secs = 1.5
        far_utterances = 2
        [grid]
        rooms = [[4.0, 3.0, 3.0]]
        t60s = [0.3]
        ser_db = [5.0]
        snr_db = [20.0, 30.0]
        [nlms]
        filter_len = 128
        """
    )
    assert cfg.bundle_count == 2
    with tempfile.TemporaryDirectory() as tmp:
        root, out = Path(tmp) / "data", Path(tmp) / "enh"
        assert saec.synth(cfg, str(root)) == ["b00000", "b00001"]
        model = saec.Model(seed=0)
        assert model.param_count > 0
        model.save(str(Path(tmp) / "ck"))
        again = saec.Model.load(str(Path(tmp) / "ck"))
        assert again.param_count == model.param_count
        for algo in ["none", "wiener", "nlms"]:
            assert saec.run(cfg, str(root), algo, str(out)) == 2
        assert saec.run(cfg, str(root), "neural", str(out), str(Path(tmp) / "ck")) == 2
        rows = saec.evaluate(str(root), str(out), str(Path(tmp) / "eval"))
        assert len(rows) == 8
        none = [r for r in rows if r[1] == "none"]
        assert all(abs(r[2]) < 1e-9 for r in none)
        try:
            saec.run(cfg, str(root), "magic", str(out))
        except ValueError:
            pass
        else:
            raise AssertionError("unknown algorithm accepted")


if __name__ == "__main__":
    check_stft_round_trip()
    check_baselines_and_metrics()
    check_pipeline()
    print("python smoke test passed")
