"""Smoke test for the pygnnpcg extension.

Build and install first:
    pip install --no-build-isolation -e crates/python
"""

import json
import tempfile

import pygnnpcg as g


def path_laplacian(n):
    rows, cols, vals = [], [], []
    for i in range(n):
        rows.append(i)
        cols.append(i)
        vals.append(2.5)
        if i > 0:
            rows += [i, i - 1]
            cols += [i - 1, i]
            vals += [-1.0, -1.0]
    return g.SparseMatrix.from_triplets(n, rows, cols, vals)


def main():
    a = path_laplacian(50)
    assert a.n == 50 and a.is_symmetric()
    b = [1.0] * a.n
    for method in ["identity", "jacobi", "gauss_seidel", "ic0", "ic2"]:
        x, report = g.solve(a, b, method=method, thresholds=[1e-6, 1e-10])
        assert report["converged"], method
        r = [bi - ai for bi, ai in zip(b, a.spmv(x))]
        assert max(abs(v) for v in r) < 1e-8, method
        print(f"{method:>12}: {report['iterations']} iterations")

    model = g.Model("heat", seed=3, x0_head=True)
    x, report = g.solve(a, b, method="learned+x0", model=model, thresholds=[1e-10])
    assert report["converged"]
    print(f"{'learned+x0':>12}: {report['iterations']} iterations, {model}")
    assert g.preconditioned_condition(a, b, "ic0") < a.condition_number()

    verts, tris = g.disk_mesh([6, 12, 18])
    assert len(verts) == 37 and len(tris) > 0

    config = {
        "name": "smoke",
        "kind": "heat",
        "mesh": {"type": "unit_square", "k": 6},
        "trajectories": 2,
        "steps": 20,
        "seed": 1,
        "dt": 0.01,
        "alpha": {"type": "uniform", "lo": 1.0, "hi": 5.0},
        "wave_speed": {"type": "fixed", "value": 1.0},
        "dirichlet_amplitude": 0.5,
        "source_amplitude": 1.0,
        "neumann_amplitude": 0.2,
        "initial_bumps": 3,
        "test_trajectories": 1,
    }
    with tempfile.TemporaryDirectory() as tmp:
        n_train, n_test = g.generate_dataset(json.dumps(config), tmp)
        assert (n_train, n_test) == (20, 20)
        trained, losses = g.train(model, tmp, json.dumps({"epochs": 1, "batch_size": 10}))
        assert len(losses) == 2 and all(l == l for l in losses)
        a0, b0, x0 = g.load_systems(tmp, "test")[0]
        x, report = g.solve(a0, b0, method="learned", model=trained, thresholds=[1e-10])
        assert report["converged"]
        assert max(abs(p - q) for p, q in zip(x, x0)) < 1e-6 * max(abs(q) for q in x0)
        trained.save(f"{tmp}/model.json")
        assert g.Model.load(f"{tmp}/model.json").n_parameters == trained.n_parameters
    print("pygnnpcg smoke test passed")


if __name__ == "__main__":
    main()
