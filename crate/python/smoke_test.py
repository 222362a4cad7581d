"""Smoke test for the Python bindings.

Build first with `cargo build -p atrada-py --release` (or a debug build);
the script imports the freshly built library from target/.
"""

import importlib.util
import math
import pathlib
import random
import shutil
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent
SUFFIX = {"darwin": "dylib", "win32": "dll"}.get(sys.platform, "so")


def load_module():
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / f"libatrada.{SUFFIX}"
        if lib.exists():
            break
    else:
        sys.exit("build the bindings first: cargo build -p atrada-py")
    dest = pathlib.Path(tempfile.mkdtemp()) / "atrada.so"
    shutil.copy(lib, dest)
    spec = importlib.util.spec_from_file_location("atrada", dest)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def check_numerics(atrada):
    assert abs(atrada.relative_improvement(0.016, 0.025) - 0.36) < 1e-12

    xs = [0.0, 1.0, 2.0, 3.0]
    ys = [9000.0, 7000.0, 7000.0, 4000.0]
    mid = atrada.pchip_interpolate(xs, ys, [0.0, 1.5, 2.5])
    assert mid[0] == 9000.0 and mid[1] == 7000.0 and 4000.0 <= mid[2] <= 7000.0

    rng = random.Random(0)
    rows = [[rng.gauss(0, 3), rng.gauss(0, 1), rng.gauss(0, 0.01)] for _ in range(200)]
    pca = atrada.Pca.fit(rows, variance=0.99)
    assert pca.n_components == 2, pca.n_components
    back = pca.invert(pca.project(rows))
    assert max(abs(a - b) for r, s in zip(rows, back) for a, b in zip(r, s)) < 0.1

    blobs = [[rng.gauss(c, 0.5), rng.gauss(-c, 0.5)] for c in (0.0, 6.0) for _ in range(150)]
    gmm = atrada.GaussianMixture.fit_bic(blobs, [1, 2, 3, 4], seed=1)
    assert gmm.k == 2, gmm.k
    assert abs(sum(gmm.weights) - 1.0) < 1e-9
    assert all(b >= a - 1e-8 for a, b in zip(gmm.trace, gmm.trace[1:]))
    assert len(gmm.sample(5, seed=2)) == 5
    assert math.isfinite(gmm.log_likelihood(blobs))


def check_pipeline(atrada, out):
    cfg = atrada.PipelineConfig(
        """
[dataset]
max_len = 64
[sim]
n_trajectories = 30
[model]
layers = 1
hidden = 8
heads = 2
ff = 16
max_len = 64
[train]
epochs = 2
batch_size = 8
[latent]
k_candidates = [1, 2]
[eval]
classifier_runs = 1
window = 10
max_pairs = 100
[eval.net]
layers = 1
hidden = 8
heads = 2
ff = 16
epochs = 1
batch_size = 16
"""
    )
    cfg.out = out
    cfg.set_seed(3)
    report = atrada.run_pipeline(cfg)
    assert report["method"] == "atrada"
    assert report["n_generated"] == 30
    assert 0.0 <= report["ds_classifier"] <= 0.5
    flights = atrada.read_trajectories(cfg.generated_path)
    assert len(flights) == 30 and all(len(pts) >= 2 for _, pts in flights)

    cfg.baseline = "smote-i"
    assert atrada.fit_latent(cfg) is None
    assert atrada.generate(cfg) == 30
    assert atrada.evaluate(cfg)["method"] == "smote-i"

    try:
        cfg.baseline = "vae"
    except ValueError:
        pass
    else:
        raise AssertionError("unknown baseline accepted")


def main():
    atrada = load_module()
    check_numerics(atrada)
    with tempfile.TemporaryDirectory() as out:
        check_pipeline(atrada, out)
    print("python smoke test passed")


if __name__ == "__main__":
    main()
