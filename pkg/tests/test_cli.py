import base64
import json
import os

import numpy as np
import pytest
from fastapi.testclient import TestClient

from carben import classifier, imaging, transforms
from carben.attack import AttackConfig
from carben.classifier import SplitMix64
from carben.cli import load_attack_config, main, parse_chain, parse_dataset
from carben.service import LoadedModel, PanelService, Sample, create_app, level_to_param
from carben.transforms import CANONICAL_ORDER, Kind, SEMANTIC_KINDS


@pytest.fixture(scope="module")
def weights_file(quick_model, tmp_path_factory):
    path = str(tmp_path_factory.mktemp("cli") / "model.cpw")
    classifier.save_weights(quick_model, path)
    return path


@pytest.fixture(scope="module")
def sample_ppm(tmp_path_factory):
    ds = classifier.synth_shapes(41, 1)
    path = str(tmp_path_factory.mktemp("cli") / "sample.ppm")
    imaging.write_ppm(ds.images[0], path)
    return path, ds.images[0], int(ds.labels[0])


# ---------------------------------------------------------------------------
# Parsers
# ---------------------------------------------------------------------------


def test_parse_dataset_synth():
    ds = parse_dataset("synth:5:8")
    assert len(ds) == 8
    ds2 = parse_dataset("synth:5:8")
    assert all(np.array_equal(a, b) for a, b in zip(ds.images, ds2.images))


def test_parse_dataset_bad_spec():
    with pytest.raises(ValueError):
        parse_dataset("mnist:./x")
    with pytest.raises(ValueError):
        parse_dataset("synth:5")


def test_parse_chain():
    chain = parse_chain("brightness=0.1, contrast=1.2")
    assert chain == [(Kind.BRIGHTNESS, 0.1), (Kind.CONTRAST, 1.2)]
    with pytest.raises(ValueError):
        parse_chain("linf=0.03")
    with pytest.raises(ValueError):
        parse_chain("sharpen=2")
    with pytest.raises(ValueError):
        parse_chain("brightness")


def test_load_attack_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"steps": 3, "enabled": ["hue", "linf"], "bounds": {"rotation": [-0.1, 0.1]}}))
    cfg = load_attack_config(str(path))
    assert cfg.steps == 3
    assert set(cfg.enabled) == {Kind.HUE, Kind.LINF}
    assert cfg.bounds[Kind.ROTATION].hi == 0.1
    path.write_text(json.dumps({"stepz": 3}))
    with pytest.raises(ValueError):
        load_attack_config(str(path))
    assert load_attack_config(None) == AttackConfig()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train"])  # missing required flags
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_runtime_error_exits_1(tmp_path, capsys):
    rc = main(["attack", "--model", str(tmp_path / "missing.cpw"), "--image", "x.ppm",
               "--label", "0", "--out", str(tmp_path / "o.ppm")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_train_writes_weights_and_is_deterministic(tmp_path, capsys):
    out1 = str(tmp_path / "w1.cpw")
    out2 = str(tmp_path / "w2.cpw")
    args = ["--dataset", "synth:3:600", "--epochs", "4", "--seed", "3"]
    assert main(["train", *args, "--out", out1]) == 0
    assert main(["train", *args, "--out", out2]) == 0
    assert open(out1, "rb").read() == open(out2, "rb").read()
    msg = capsys.readouterr().out
    assert "clean accuracy" in msg
    w = classifier.load_weights(out1)
    assert classifier.accuracy(w, classifier.synth_shapes(3, 600)) >= 0.9


def test_attack_writes_ppm_and_sidecar(weights_file, sample_ppm, tmp_path, capsys):
    ppm, image, label = sample_ppm
    out = str(tmp_path / "adv.ppm")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"steps": 2, "enabled": ["linf", "brightness"]}))
    rc = main(["attack", "--model", weights_file, "--image", ppm, "--label", str(label),
               "--config", str(cfg), "--out", out])
    assert rc == 0
    adv = imaging.read_ppm(out)
    assert adv.shape == image.shape
    side = json.load(open(out + ".json"))
    assert side["order"] == ["linf", "brightness"]
    assert isinstance(side["success"], bool)
    assert side["queries"] >= 1
    assert "epsilon" in side["params"]["linf"]
    assert "attack" in capsys.readouterr().out


def test_perturb_identity_chain_roundtrips_bytes(sample_ppm, tmp_path, capsys):
    ppm, _, _ = sample_ppm
    out = str(tmp_path / "same.ppm")
    rc = main(["perturb", "--image", ppm, "--chain", "brightness=0.0,contrast=1.0", "--out", out])
    assert rc == 0
    assert open(out, "rb").read() == open(ppm, "rb").read()
    capsys.readouterr()


def test_perturb_then_inverse_rotation(sample_ppm, tmp_path, capsys):
    ppm, image, _ = sample_ppm
    out = str(tmp_path / "rot.ppm")
    rc = main(["perturb", "--image", ppm, "--chain", "rotation=0.1", "--out", out])
    assert rc == 0
    back = str(tmp_path / "back.ppm")
    assert main(["perturb", "--image", out, "--chain", "rotation=-0.1", "--out", back]) == 0
    restored = imaging.read_ppm(back)
    # Two opposite warps mostly undo each other on a piecewise-constant image.
    assert np.abs(restored - image).mean() < 0.1
    capsys.readouterr()


def test_perturb_unknown_kind_exits_1(sample_ppm, tmp_path, capsys):
    ppm, _, _ = sample_ppm
    rc = main(["perturb", "--image", ppm, "--chain", "blur=1", "--out", str(tmp_path / "x.ppm")])
    assert rc == 1
    assert "unknown kind" in capsys.readouterr().err


def test_bench_report_and_leaderboard(weights_file, tmp_path, capsys):
    report = str(tmp_path / "report.csv")
    board = str(tmp_path / "board.json")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"steps": 2}))
    rc = main(["bench", "--model", weights_file, "--dataset", "synth:9:8",
               "--threats", "clean,full", "--config", str(cfg),
               "--report", report, "--leaderboard", board, "--name", "bench-test",
               "--workers", "1"])
    assert rc == 0
    lines = open(report).read().strip().split("\n")
    assert len(lines) == 2
    assert lines[0].split(",") == ["model", "clean", "full"]
    entries = json.load(open(board))["entries"]
    assert entries[0]["model_name"] == "bench-test"
    out = capsys.readouterr().out
    assert "clean:" in out and "full:" in out and "| rank |" in out


def test_serve_missing_weights_exits_1(tmp_path, capsys):
    rc = main(["serve", "--models", str(tmp_path / "nope.cpw"), "--samples", "synth:0:2",
               "--leaderboard", str(tmp_path / "b.json")])
    assert rc == 1
    assert "not found" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# CLI / API parity
# ---------------------------------------------------------------------------


def test_cli_and_api_perturb_parity(quick_model, sample_ppm, tmp_path, capsys):
    """Ten randomized semantic chains produce byte-identical pixels through
    the CLI perturb command and the /api/perturb endpoint."""
    ppm, _, label = sample_ppm
    # Both paths must start from the same pixels: the CLI reads the quantized
    # PPM, so the service sample does too.
    image = imaging.read_ppm(ppm)
    sample = Sample(id="s0", image=image, label=label, class_name="circle")
    model = LoadedModel(id="m0", name="m", kind_tag="cnn32-v1", weights=quick_model)
    svc = PanelService([model], [sample], str(tmp_path / "board.json"))
    client = TestClient(create_app(svc))

    rng = SplitMix64(99)
    for trial in range(10):
        order = list(SEMANTIC_KINDS)
        rng.shuffle(order)
        keep = 1 + rng.randint(len(order))
        order = order[:keep]
        levels = {k: 1 + rng.randint(4) for k in order}
        signs = {k: (1 if rng.randint(2) else -1) for k in order}

        api = client.post(
            "/api/perturb",
            json={
                "sample_id": "s0",
                "order": [k.key for k in order],
                "levels": {k.key: v for k, v in levels.items()},
                "signs": {k.key: v for k, v in signs.items()},
            },
        ).json()

        chain = ",".join(
            f"{k.key}={level_to_param(k, levels[k], svc.config, signs[k])!r}" for k in order
        )
        out = str(tmp_path / f"cli{trial}.ppm")
        assert main(["perturb", "--image", ppm, "--chain", chain, "--out", out]) == 0
        cli_bytes = imaging.quantize_u8(imaging.read_ppm(out))
        api_bytes = np.transpose(
            np.frombuffer(base64.b64decode(api["image_b64"]), np.uint8).reshape(32, 32, 3),
            (2, 0, 1),
        )
        assert np.array_equal(cli_bytes, api_bytes), f"trial {trial} diverged"
    capsys.readouterr()
