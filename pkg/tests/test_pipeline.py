import json

import numpy as np
import pytest
from scipy.io import wavfile

from shallowloc import io as sio
from shallowloc.cli import main
from shallowloc.pipeline import (
    ConfigError,
    PipelineConfig,
    load_config,
    run_pipeline,
    stage_seeds,
    synth_record,
)

# two modes below 100 Hz with wide bands: a quick end-to-end scene
SMALL = {"D": "50", "z_s": "15", "z_r": "15", "n_modes": "2", "n_t0": "40", "restarts": "0"}


@pytest.fixture(scope="module")
def small_ini(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.ini"
    path.write_text("[run]\n" + "".join(f"{k} = {v}\n" for k, v in SMALL.items()))
    return path


def cli(*args):
    return main([str(a) for a in args])


# -- configuration ---------------------------------------------------------------

def test_defaults_give_fixture():
    c = PipelineConfig()
    s = c.scene()
    assert (s.r, s.D, s.dt, s.z_s, s.z_r) == (10_000.0, 100.0, 1.0, 50.0, 50.0)
    assert c.f_max_hz == 100.0 and c.rate == 400.0


def test_ini_and_overrides(small_ini):
    c = load_config(small_ini, ["p=0.6", "per_mode_max=yes", "bench_p=0.1,0.3", "t_w=none"])
    assert c.D == 50.0 and c.n_modes == 2 and c.restarts == 0
    assert c.p == 0.6 and c.per_mode_max is True
    assert c.bench_p == (0.1, 0.3) and c.t_w is None


@pytest.mark.parametrize("override", ["bogus=1", "p=2", "n_modes=0", "preset=atlantis",
                                      "restarts=two", "input=/no/such/file.wav", "p"])
def test_bad_configuration_rejected(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


def test_config_hash_stable_and_sensitive(tmp_path):
    a = load_config(None, ["p=0.5"])
    a.to_ini(tmp_path / "a.ini")
    b = load_config(tmp_path / "a.ini")
    assert a == b and a.config_hash() == b.config_hash()
    assert a.replace(p=0.51).config_hash() != a.config_hash()


def test_stage_seeds():
    assert stage_seeds(3) == stage_seeds(3)
    noise, opt = stage_seeds(3)
    assert noise != opt
    assert stage_seeds(4) != stage_seeds(3)


def test_seed_changes_noise_only():
    base = PipelineConfig(noise_delta=0.05, duration=4.0)
    a, b = synth_record(base), synth_record(base.replace(seed=1))
    clean = synth_record(base.replace(noise_delta=0.0))
    assert not np.array_equal(a.samples, b.samples)
    assert np.array_equal(clean.samples, synth_record(base.replace(noise_delta=0.0, seed=1)).samples)
    assert np.std(a.samples - clean.samples) == pytest.approx(0.05, rel=0.1)


# -- command line ----------------------------------------------------------------

def test_exit_codes_for_bad_invocations(tmp_path, small_ini):
    assert cli() == 2
    assert cli("separate", tmp_path / "missing.wav", "-o", tmp_path) == 2
    assert cli("invert", tmp_path / "missing.csv", "-o", tmp_path) == 2
    assert cli("synth", "--set", "p=2", "-o", tmp_path) == 2
    assert cli("synth", "-c", tmp_path / "nope.ini", "-o", tmp_path) == 2


def test_corrupt_wav_is_input_error(tmp_path, small_ini):
    assert cli("synth", "-c", small_ini, "--set", "duration=2", "-o", tmp_path / "s") == 0
    raw = (tmp_path / "s" / "signal.wav").read_bytes()
    (tmp_path / "cut.wav").write_bytes(raw[: len(raw) // 3])
    (tmp_path / "head.wav").write_bytes(raw[:30])
    assert cli("separate", "-c", small_ini, tmp_path / "cut.wav", "-o", tmp_path / "x") == 2
    assert cli("separate", "-c", small_ini, tmp_path / "head.wav", "-o", tmp_path / "x") == 2


def test_record_shorter_than_window_fails_cleanly(tmp_path, small_ini, capsys):
    wavfile.write(tmp_path / "short.wav", 400, np.random.default_rng(0).standard_normal(50))
    assert cli("curves", "-c", small_ini, tmp_path / "short.wav", "-o", tmp_path) == 3
    assert "exceeds record length" in capsys.readouterr().err


def test_synth_is_reproducible(tmp_path, small_ini):
    for d in ("a", "b"):
        assert cli("synth", "-c", small_ini, "--set", "noise_delta=0.01", "-o", tmp_path / d) == 0
    for name in ("signal.wav", "truth_curves.csv", "spectrogram.bin", "config.ini"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_written_config_reproduces_run(tmp_path, small_ini):
    assert cli("synth", "-c", small_ini, "--set", "seed=7", "--set", "noise_delta=0.01",
               "-o", tmp_path / "a") == 0
    assert cli("synth", "-c", tmp_path / "a" / "config.ini", "-o", tmp_path / "b") == 0
    assert (tmp_path / "a" / "signal.wav").read_bytes() == (tmp_path / "b" / "signal.wav").read_bytes()


def test_single_mode_separation_passes_record_through(tmp_path, small_ini):
    cli("synth", "-c", small_ini, "-o", tmp_path)
    assert cli("separate", "-c", small_ini, "--set", "n_modes=1", tmp_path / "signal.wav",
               "-o", tmp_path / "sep") == 0
    assert sorted(p.name for p in (tmp_path / "sep").glob("mode_*.wav")) == ["mode_1.wav"]
    a = sio.read_wav(tmp_path / "signal.wav").samples
    assert np.array_equal(sio.read_wav(tmp_path / "sep" / "mode_1.wav").samples, a)


def test_silent_component_gives_empty_curves(tmp_path, small_ini):
    wavfile.write(tmp_path / "zero.wav", 400, np.zeros(4096))
    assert cli("curves", "-c", small_ini, tmp_path / "zero.wav", "-o", tmp_path / "c") == 0
    lines = (tmp_path / "c" / "curves.csv").read_text().splitlines()
    assert lines[0] == ",".join(sio.CURVE_COLUMNS)
    assert all(line.endswith(",0") for line in lines[1:])
    # nothing to invert
    assert cli("invert", "-c", small_ini, tmp_path / "c" / "curves.csv", "-o", tmp_path / "i") == 3


# -- staged against one-shot -----------------------------------------------------

@pytest.fixture(scope="module")
def staged(tmp_path_factory, small_ini):
    d = tmp_path_factory.mktemp("staged")
    args = ("-c", small_ini, "--set", "mean_curves=yes")
    assert cli("run", *args, "-o", d / "run") == 0
    assert cli("synth", *args, "-o", d / "s") == 0
    assert cli("separate", *args, d / "s" / "signal.wav", "-o", d / "sep") == 0
    assert cli("curves", *args, d / "sep" / "mode_1.wav", d / "sep" / "mode_2.wav",
               "-o", d / "cv") == 0
    assert cli("invert", *args, d / "cv" / "curves.csv", "-o", d / "inv") == 0
    return d


def test_staged_equals_one_shot(staged):
    assert (staged / "run" / "curves.csv").read_bytes() == (staged / "cv" / "curves.csv").read_bytes()
    for n in (1, 2):
        assert ((staged / "run" / f"mode_{n}.wav").read_bytes()
                == (staged / "sep" / f"mode_{n}.wav").read_bytes())
    a = sio.read_json(staged / "run" / "result.json")
    b = sio.read_json(staged / "inv" / "result.json")
    assert a["params"] == b["params"]


def test_mean_curves_written_alongside(staged):
    mean = sio.read_curves_csv(staged / "cv" / "curves_mean.csv")
    assert mean.n_valid > 0


@pytest.mark.parametrize("stage", ["run", "s", "sep", "cv", "inv"])
def test_manifest_lists_every_artifact(staged, stage):
    m = json.loads((staged / stage / "manifest.json").read_text())
    on_disk = {p.name for p in (staged / stage).iterdir()} - {"manifest.json"}
    assert set(m["artifacts"]) == on_disk
    assert m["config_hash"] == load_config(staged / stage / "config.ini").config_hash()
    assert set(m["versions"]) >= {"shallowloc", "numpy", "scipy"}
    assert all(v >= 0 for v in m["timings"].values())


def test_result_json_layout(staged):
    r = sio.read_json(staged / "run" / "result.json")
    assert set(r["params"]) == {"r", "c_w", "c_b", "rho_w", "rho_b", "D", "dt"}
    assert r["J_tilde"] <= r["start_J_tilde"]
    assert r["truth"]["r"] == 10_000.0


def test_in_memory_run_matches_files(staged, small_ini):
    res = run_pipeline(load_config(small_ini, ["mean_curves=yes"]))
    files = sio.read_json(staged / "run" / "result.json")
    assert {k: getattr(res.inversion.params, k) for k in files["params"]} == files["params"]
