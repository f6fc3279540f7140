import json
import subprocess
import sys

import numpy as np
import pytest

from softvc import config, core, dsp
from softvc.cli import run
from softvc.errors import ConfigError, ParseError
from softvc.synthetic import lookup_corpus


class TestConfig:
    def test_defaults(self):
        cfg = config.resolve()
        assert cfg["kmeans.k"] == 100 and cfg["soft.lr"] == 2e-5 and cfg["mel.n_mels"] == 128
        assert cfg["eer.n_enroll"] == 50 and cfg["griffin_lim.iters"] == 32

    def test_file_then_override(self):
        values = config.parse_config_text("kmeans.k = 12  # fewer units\nseed=3\n")
        cfg = config.resolve(values, {"kmeans.k": 5, "seed": None})
        assert cfg["kmeans.k"] == 5 and cfg["seed"] == 3

    def test_bool_coercion(self):
        assert config.parse_config_text("kmeans.speaker_normalize = yes")["kmeans.speaker_normalize"] is True

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            config.parse_config_text("kmeans.kk = 3")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            config.parse_config_text("kmeans.k = many")

    def test_missing_equals(self):
        with pytest.raises(ParseError):
            config.parse_config_text("kmeans.k 3")


def _invoke(capsys, *argv):
    code = run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    corpus = lookup_corpus(K=8, D=6, n_utts=6, frames_per_utt=30, seed=1)
    rng = np.random.default_rng(0)
    lines = []
    for utt in corpus.utterances:
        core.write_tensor("VCFT", utt.frames, root / f"{utt.utterance_id}.vcft")
        n = dsp.num_samples(2 * utt.num_frames)
        dsp.write_wav(dsp.Waveform(0.1 * rng.normal(size=n)), root / f"{utt.utterance_id}.wav")
        lines.append(json.dumps({
            "id": utt.utterance_id, "speaker": utt.speaker_id,
            "feature_path": f"{utt.utterance_id}.vcft", "wav_path": f"{utt.utterance_id}.wav",
        }))
    (root / "m.jsonl").write_text("\n".join(lines) + "\n")
    (root / "fast.cfg").write_text(
        "soft.steps = 40\nsoft.lr = 1e-3\nsoft.dim = 8\n"
        "acoustic.steps = 40\nacoustic.hidden = 16\nkmeans.k = 8\nkmeans.n_init = 2\n"
    )
    return root


class TestCli:
    def test_unknown_subcommand(self, capsys):
        code, _, err = _invoke(capsys, "bogus")
        assert code == 2 and "usage" in err

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "softvc.cli", "bogus"], capture_output=True, text=True)
        assert proc.returncode == 2 and "usage" in proc.stderr

    def test_train_kmeans_reference_k(self, capsys, workspace):
        code, out, err = _invoke(capsys, "train-kmeans", "--manifest", workspace / "m.jsonl",
                                 "--k", 100, "--seed", 7, "--out", workspace / "cb100.vccb")
        assert code == 0
        result = json.loads(out)
        assert {"inertia", "iterations"} <= set(result) and result["K"] == 100
        assert "kmeans.k = 100" in err
        sidecar = json.loads((workspace / "cb100.vccb.json").read_text())
        assert sidecar["seed"] == 7 and sidecar["K"] == 100

    def test_full_pipeline(self, capsys, workspace):
        cfg = workspace / "fast.cfg"
        m = workspace / "m.jsonl"
        assert _invoke(capsys, "train-kmeans", "--config", cfg, "--manifest", m, "--out", workspace / "cb.vccb")[0] == 0

        code, out, _ = _invoke(capsys, "encode-discrete", "--codebook", workspace / "cb.vccb",
                               "--features", workspace / "utt000.vcft", "--out", workspace / "u.vcun")
        assert code == 0 and json.loads(out)["frames"] == 30
        assert len(core.read_units(workspace / "u.vcun", K=8)) == 30

        code, out, _ = _invoke(capsys, "train-soft", "--config", cfg, "--manifest", m,
                               "--codebook", workspace / "cb.vccb", "--out", workspace / "se.ckpt")
        assert code == 0 and json.loads(out)["steps"] == 40

        code, out, _ = _invoke(capsys, "encode-soft", "--soft", workspace / "se.ckpt",
                               "--features", workspace / "utt000.vcft", "--out", workspace / "s.vcft")
        assert code == 0 and core.read_tensor(workspace / "s.vcft")[1].shape == (30, 8)

        code, out, _ = _invoke(capsys, "train-acoustic", "--config", cfg, "--manifest", m,
                               "--soft", workspace / "se.ckpt", "--out", workspace / "am.ckpt")
        assert code == 0, out

        outputs = []
        for name in ("y1.wav", "y2.wav"):
            code, out, _ = _invoke(capsys, "convert", "--features", workspace / "utt000.vcft", "--soft",
                                   workspace / "se.ckpt", "--acoustic", workspace / "am.ckpt",
                                   "--out", workspace / name, "--iters", 4)
            assert code == 0
            outputs.append((workspace / name).read_bytes())
        assert outputs[0] == outputs[1]
        assert json.loads(out)["samples"] == (30 * 2 - 1) * 160 + 1024

    def test_extract_mel(self, capsys, workspace):
        code, out, _ = _invoke(capsys, "extract-mel", "--wav", workspace / "utt001.wav", "--out", workspace / "x.vcml")
        assert code == 0 and json.loads(out) == {"frames": 60, "n_mels": 128}
        assert core.read_tensor(workspace / "x.vcml")[0] == "VCML"

    def test_runtime_error_tagged(self, capsys, workspace):
        bad = workspace / "bad.vcft"
        bad.write_bytes(b"XXXX" + bytes(16))
        code, _, err = _invoke(capsys, "extract-mel", "--wav", bad, "--out", workspace / "y.vcml")
        assert code == 1 and "[dsp]" in err

    def test_bad_config_key(self, capsys, workspace):
        cfg = workspace / "broken.cfg"
        cfg.write_text("nope = 1\n")
        code, _, err = _invoke(capsys, "eval-mos", "--config", cfg, "--ratings", "-")
        assert code == 1 and "[config]" in err

    def test_eval_wer_per_breakdown(self, capsys, tmp_path):
        ref = tmp_path / "ref.jsonl"
        hyp = tmp_path / "hyp.jsonl"
        ref.write_text(json.dumps({"id": "a", "transcript_words": "the cat sat", "transcript_phonemes": "f i n"}) + "\n")
        hyp.write_text(json.dumps({"id": "a", "transcript_words": "the cat sit", "transcript_phonemes": "th i n"}) + "\n")
        code, out, _ = _invoke(capsys, "eval-wer", "--ref", ref, "--hyp", hyp)
        assert code == 0 and json.loads(out)["wer"] == pytest.approx(1 / 3)
        code, out, _ = _invoke(capsys, "eval-per", "--ref", ref, "--hyp", hyp)
        assert json.loads(out)["per"] == pytest.approx(1 / 3)
        code, out, _ = _invoke(capsys, "eval-phoneme-breakdown", "--ref", ref, "--hyp", hyp)
        assert json.loads(out)["per_symbol"] == {"f": 1.0, "i": 0.0, "n": 0.0}

    def test_eval_eer(self, capsys, tmp_path):
        rng = np.random.default_rng(0)
        for name, n in (("conv", 2), ("enr", 8)):
            lines = []
            for i in range(n):
                core.write_tensor("VCEM", rng.normal(size=(1, 4)), tmp_path / f"{name}{i}.vcem")
                lines.append(json.dumps({"id": f"{name}{i}", "embedding_path": f"{name}{i}.vcem"}))
            (tmp_path / f"{name}.jsonl").write_text("\n".join(lines) + "\n")
        code, out, _ = _invoke(capsys, "eval-eer", "--converted", tmp_path / "conv.jsonl",
                               "--enrollment", tmp_path / "enr.jsonl", "--n-enroll", 5)
        result = json.loads(out)
        assert code == 0 and result["genuine_trials"] == result["impostor_trials"] == 10
        assert 0.0 <= result["eer"] <= 1.0

    def test_eval_mos_file(self, capsys, tmp_path):
        path = tmp_path / "r.txt"
        path.write_text("3\n5\n")
        code, out, _ = _invoke(capsys, "eval-mos", "--ratings", path)
        assert code == 0 and json.loads(out) == {"mos": {"ci95": 1.96, "mean": 4.0}, "n": 2}
