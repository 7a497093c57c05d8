"""Smoke test for the facewarp extension module.

Build and run from the repository root:

    cargo build -p facewarp-py --features extension-module
    cp target/debug/libfacewarp_py.so crates/py/python/facewarp.so
    python3 crates/py/python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import facewarp as fw


def close(a, b, tol):
    return abs(a - b) <= tol


def main():
    mesh = fw.Mesh.mean_face(31, 31, "mpie68", 16)
    verts = mesh.vertices
    lm_idx = mesh.landmark_indices
    assert len(lm_idx) == 68

    # frontal camera at distance 10, focal 200, principal point (32, 32)
    f, d, c = 200.0, 10.0, 32.0
    cam = fw.Camera.from_matrix([f, 0, -c, c * d, 0, -f, -c, c * d, 0, 0, -1, d])
    center = cam.center()
    assert all(close(a, b, 1e-9) for a, b in zip(center, [0.0, 0.0, 10.0])), center
    assert close(cam.yaw_deg(), 0.0, 1e-9)

    lm3 = [verts[i] for i in lm_idx]
    lm2 = cam.project(lm3)
    est = fw.Camera.estimate(lm3, lm2)
    assert all(close(a, b, 1e-6 * max(1.0, abs(b))) for a, b in zip(est.params, cam.params))

    # identity warp leaves points alone; fitted warp interpolates
    ctrl = mesh.control_points
    ident = fw.TpsWarp.identity(ctrl)
    assert all(close(a, b, 1e-12) for p, q in zip(ident.apply(ctrl), ctrl) for a, b in zip(p, q))
    moved = [[x + 0.02 * math.sin(i), y, z] for i, (x, y, z) in enumerate(ctrl)]
    warp = fw.TpsWarp.fit(ctrl, moved)
    assert all(close(a, b, 1e-8) for p, q in zip(warp.apply(ctrl), moved) for a, b in zip(p, q))
    assert fw.TpsWarp.from_json(warp.to_json()).apply(ctrl[:3]) == warp.apply(ctrl[:3])

    # refit: shifted landmarks are reproduced exactly
    target = [[u + 0.5, v - 0.25] for u, v in lm2]
    corr = fw.refit_model(mesh, cam, target)
    reproj = cam.project(corr.apply(lm3))
    worst = max(math.dist(p, q) for p, q in zip(reproj, target))
    assert worst < 1e-6, worst

    vis = mesh.visibility(cam)
    assert len(vis) == len(verts) and 0 < sum(vis) < len(verts)

    grid = fw.Grid(2, 2, 1, [0.0, 1.0, 2.0, 3.0])
    assert close(grid.sample([[0.5, 0.5]])[0][0], 1.5, 1e-12)

    assert close(fw.nme([[5.0, 0.0]] + [[0.0, 0.0]] * 67, [[0.0, 0.0]] * 68, 100, 100), 5 / 68 / 100, 1e-15)
    mean, std = fw.summarize_bins([3.55, 3.92, 5.21])
    assert close(mean, 4.23, 0.005) and close(std, 0.87, 0.005)

    for module in ["proj", "tps", "sampler"]:
        report = fw.gradcheck(module, 0)
        assert report["passed"], report

    try:
        fw.Camera.estimate(lm3[:3], lm2[:3])
    except fw.FacewarpError as e:
        assert e.args[1] == "invalid_argument"
    else:
        raise AssertionError("expected FacewarpError")

    print("facewarp python smoke test: ok")


if __name__ == "__main__":
    main()
