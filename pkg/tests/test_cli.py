import json
from importlib import resources

import jsonschema
import numpy as np
import pytest

from greedypixel import cli
from greedypixel.imagecore import write_image
from greedypixel.models import dominant_channel_linear, load_model, random_linear, save_model
from greedypixel.remote import serve_in_thread


def schema(name):
    return json.loads(resources.files("greedypixel").joinpath(f"schemas/{name}.schema.json").read_text())


@pytest.fixture
def task(tmp_path):
    """Dominant-channel model file plus a correctly classified 3x16x16 sample."""
    weights = tmp_path / "lin.json"
    assert cli.main(["gen-model", "--arch", "linear", "--task", "dominant-channel", "--out", str(weights)]) == 0
    image = tmp_path / "x.ppm"
    assert cli.main(["gen-sample", "--seed", "4", "--out", str(image)]) == 0
    model = load_model(weights)
    from greedypixel.imagecore import read_image

    label = int(np.argmax(model.logits(read_image(image))))
    return weights, image, label


def attack_args(weights, image, label, out, *extra):
    return ["attack", "--image", str(image), "--label", str(label), "--target", f"file:{weights}",
            "--threat", "wb", "--eps", "8/255", "--max-queries", "2048", "--out", str(out), *extra]


def test_gen_model_deterministic(tmp_path):
    for name in ("a", "b"):
        assert cli.main(["gen-model", "--arch", "linear", "--task", "dominant-channel", "--shape", "3x16x16",
                         "--out", str(tmp_path / f"{name}.json")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    for name in ("c", "d"):
        cli.main(["gen-model", "--arch", "tinyconv", "--seed", "3", "--out", str(tmp_path / f"{name}.json")])
    assert (tmp_path / "c.json").read_bytes() == (tmp_path / "d.json").read_bytes()
    jsonschema.validate(json.loads((tmp_path / "c.json").read_text()), schema("weights"))


def test_attack_end_to_end(task, tmp_path, capsys):
    weights, image, label = task
    out = tmp_path / "run"
    assert cli.main(attack_args(weights, image, label, out, "--dump-priority")) == 0
    result = json.loads((out / "result.json").read_text())
    jsonschema.validate(result, schema("attack_result"))
    assert result["success"] and result["queries_used"] == 8 * result["pixel_steps"]
    manifest = json.loads((out / "manifest.json").read_text())
    jsonschema.validate(manifest, schema("run_manifest"))
    for entry in manifest["outputs"].values():
        assert cli.sha256_file(entry["path"]) == entry["sha256"]
    assert set(manifest["outputs"]) >= {"adversarial", "delta_gray", "result", "priority", "saliency"}
    assert (out / "delta_gray.pgm").read_bytes().startswith(b"P5")


def test_result_json_is_deterministic(task, tmp_path):
    weights, image, label = task
    for name in ("r1", "r2"):
        assert cli.main(attack_args(weights, image, label, tmp_path / name)) == 0
    assert (tmp_path / "r1/result.json").read_bytes() == (tmp_path / "r2/result.json").read_bytes()
    assert (tmp_path / "r1/adversarial.ppm").read_bytes() == (tmp_path / "r2/adversarial.ppm").read_bytes()


def test_already_misclassified(task, tmp_path):
    weights, image, label = task
    out = tmp_path / "run"
    assert cli.main(attack_args(weights, image, (label + 1) % 3, out)) == 0
    result = json.loads((out / "result.json").read_text())
    assert result["queries_used"] == 0 and result["pixel_steps"] == 0


def test_budget_exhaustion_exit_code(task, tmp_path):
    weights, image, label = task
    args = attack_args(weights, image, label, tmp_path / "run")
    args[args.index("--max-queries") + 1] = "8"
    assert cli.main(args) == cli.EXIT_BUDGET


def test_config_errors(task, tmp_path):
    weights, image, label = task
    base = ["attack", "--image", str(image), "--label", str(label), "--target", f"file:{weights}",
            "--out", str(tmp_path / "o")]
    assert cli.main(base + ["--threat", "bb-unl", "--eps", "0.1"]) == 2
    assert cli.main(base + ["--threat", "bb-unl", "--eps", "1"]) in (0, 3)
    assert cli.main(base + ["--threat", "nope"]) == 2
    assert cli.main(base + ["--label", "7"]) == 2
    assert cli.main(base + ["--target", "ftp:x"]) == 2
    small = tmp_path / "small.ppm"
    write_image(np.full((3, 2, 2), 0.5), small)
    assert cli.main(["attack", "--image", str(small), "--label", "0", "--target", f"file:{weights}",
                     "--out", str(tmp_path / "o")]) == 2
    assert cli.main(["attack"]) == 2


def test_remote_target(task, tmp_path):
    weights, image, label = task
    model = load_model(weights)
    with serve_in_thread(model) as server:
        out = tmp_path / "remote"
        args = ["attack", "--image", str(image), "--label", str(label), "--target", f"url:{server.base_url}",
                "--surrogate", f"file:{weights}", "--threat", "bb", "--eps", "8/255", "--max-queries", "2048",
                "--out", str(out)]
        assert cli.main(args) == 0
        result = json.loads((out / "result.json").read_text())
        assert server.images_served == result["queries_used"] + result["setup_queries"]
        # white-box needs local gradients
        wb = args[:]
        wb[wb.index("bb")] = "wb"
        assert cli.main(wb) == 2
        url = server.base_url
    # server gone: network failure
    args[args.index(f"url:{url}")] = f"url:{url}"
    assert cli.main(args + ["--retries", "1", "--timeout", "1"]) == 4


def test_remote_shape_mismatch(tmp_path):
    model = random_linear((3, 4, 4), 3, seed=0)
    image = tmp_path / "x.ppm"
    write_image(np.full((3, 2, 2), 0.5), image)
    with serve_in_thread(model) as server:
        assert cli.main(["attack", "--image", str(image), "--label", "0", "--target", f"url:{server.base_url}",
                         "--out", str(tmp_path / "o")]) == 2
        assert server.images_served == 0


def test_oracle_compare_linear_gap_zero(tmp_path, capsys):
    weights = tmp_path / "tiny.json"
    cli.main(["gen-model", "--arch", "linear", "--shape", "3x2x2", "--k", "2", "--seed", "5", "--out", str(weights)])
    capsys.readouterr()
    assert cli.main(["oracle-compare", "--weights", str(weights), "--out", str(tmp_path / "rep.json")]) == 0
    report = json.loads((tmp_path / "rep.json").read_text())
    jsonschema.validate(report, schema("oracle_report"))
    assert report["gap"] == 0.0 and report["is_coordinate_min"] and report["states_visited"] == 4096
    big = tmp_path / "big.json"
    save_model(random_linear((3, 4, 4), 2, seed=0), big)
    assert cli.main(["oracle-compare", "--weights", str(big)]) == 2


def test_coverage_sim(capsys):
    assert cli.main(["coverage-sim", "--m", "64", "--trials", "10000"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert abs(doc["expectation"] - 303.6) < 0.1
    assert doc["relative_error"] < 0.05


def test_metrics_report(task, tmp_path, capsys):
    weights, image, label = task
    paths = []
    for seed in range(3):
        img = tmp_path / f"x{seed}.ppm"
        cli.main(["gen-sample", "--seed", str(seed), "--out", str(img)])
        lab = json.loads(capsys.readouterr().out.strip().splitlines()[-1])["label"]
        out = tmp_path / f"run{seed}"
        cli.main(attack_args(weights, img, lab, out))
        paths.append(str(out / "result.json"))
    capsys.readouterr()
    assert cli.main(["metrics", *paths, "--out", str(tmp_path / "m.json")]) == 0
    report = json.loads((tmp_path / "m.json").read_text())
    jsonschema.validate(report, schema("metrics_report"))
    assert report["asr"] == 1.0 and 0.9 < report["mean_ssim"] <= 1.0


def test_gen_sample_label_matches_model(tmp_path, capsys):
    out = tmp_path / "s.ppm"
    assert cli.main(["gen-sample", "--seed", "9", "--out", str(out)]) == 0
    doc = json.loads(capsys.readouterr().out)
    from greedypixel.imagecore import read_image

    model = dominant_channel_linear((3, 16, 16))
    assert doc["label"] == int(np.argmax(model.logits(read_image(out))))
