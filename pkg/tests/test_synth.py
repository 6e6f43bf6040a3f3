import hashlib
import json
from dataclasses import replace

import numpy as np
import pytest

from dzl.flow import clip_flow_sequence
from dzl.synth import SynthConfig, derive_seeds, generate_clip, generate_corpus, read_manifest
from dzl.video_io import load_clip
from dzl.zone import magnitude_variance_map

SMALL = SynthConfig(width=64, height=64, T=24)


def bright_count(frame, level=0.5):
    return int(np.count_nonzero(frame > level))


def test_normal_front_grows_until_complete():
    cfg = replace(SMALL, noise_sigma=0.0)
    clip, truth, entry = generate_clip(cfg, seed=3)
    assert truth == "normal" and entry["rho"] == 1.0
    counts = [bright_count(f) for f in clip.frames]
    done = int(np.ceil(1.0 / cfg.front_speed))
    assert counts[0] == 0
    assert all(b > a for a, b in zip(counts[: done - 1], counts[1:done]))
    assert counts[-1] == counts[done]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_difference_energy_drops_after_halt(seed):
    cfg = replace(SMALL, rho=0.3, noise_sigma=0.002)
    clip, truth, _ = generate_clip(cfg, seed)
    assert truth == "abnormal"
    energy = np.sum(np.diff(clip.frames, axis=0) ** 2, axis=(1, 2))
    halt = int(np.ceil(cfg.rho / cfg.front_speed))
    assert energy[: halt - 1].mean() > 5 * energy[halt:].mean()


def test_same_seed_bit_identical():
    a = generate_clip(SMALL, 11)[0]
    b = generate_clip(SMALL, 11)[0]
    assert np.array_equal(a.frames, b.frames)
    assert not np.array_equal(a.frames, generate_clip(SMALL, 12)[0].frames)


def test_frames_in_unit_range():
    f = generate_clip(SMALL, 4)[0].frames
    assert f.shape == (24, 64, 64) and f.min() >= 0.0 and f.max() <= 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(rho=1.5)
    with pytest.raises(ValueError):
        SynthConfig(T=3)
    assert SynthConfig(rho=0.89).truth == "abnormal"
    assert SynthConfig(rho=0.9).truth == "normal"


@pytest.mark.parametrize("seed", [0, 1])
def test_normal_has_more_flow_variance(seed):
    top = []
    for rho in (1.0, 0.3):
        clip = generate_clip(replace(SMALL, rho=rho), seed)[0]
        vmap = magnitude_variance_map(clip_flow_sequence(clip))
        top.append(np.sort(vmap.ravel())[-vmap.size // 5 :].mean())
    assert top[0] > top[1]


def file_hash(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def test_corpus(tmp_path):
    cfg = SynthConfig(width=32, height=32, T=6)
    manifest = generate_corpus(3, 4, tmp_path / "a", severity=(0.2, 0.5), seed=7, cfg=cfg)
    assert len(manifest) == 7
    assert sum(e["truth"] == "abnormal" for e in manifest) == 4
    assert all(0.2 <= e["rho"] <= 0.5 for e in manifest if e["truth"] == "abnormal")
    entries = read_manifest(tmp_path / "a" / "manifest.json")
    assert [e["file"] for e in entries] == [e["file"] for e in manifest]
    hashes = [file_hash(e["path"]) for e in entries]
    assert len(set(hashes)) == 7
    assert len(set(e["seed"] for e in manifest)) == 7
    clip = load_clip(entries[0]["path"])
    assert clip.frames.shape == (6, 32, 32)
    generate_corpus(3, 4, tmp_path / "b", severity=(0.2, 0.5), seed=7, cfg=cfg)
    again = read_manifest(tmp_path / "b" / "manifest.json")
    assert hashes == [file_hash(e["path"]) for e in again]


def test_corpus_argument_errors(tmp_path):
    with pytest.raises(ValueError):
        generate_corpus(0, 1, tmp_path)
    with pytest.raises(ValueError):
        generate_corpus(1, 1, tmp_path, severity=(0.6, 0.5))


def test_manifest_validation(tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text(json.dumps([{"truth": "normal"}]))
    with pytest.raises(ValueError):
        read_manifest(bad)
    bad.write_text("[]")
    with pytest.raises(ValueError):
        read_manifest(bad)


def test_derived_seeds_distinct():
    seeds = derive_seeds(0, 500)
    assert len(set(seeds)) == 500 and seeds == derive_seeds(0, 500)
