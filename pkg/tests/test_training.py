import numpy as np
import pytest

from matforge import datagen, fem, hybrid as hyb, icnn, materials as mat, meshing, training


def two_element_mesh():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    elements = np.array([[0, 1, 2], [0, 2, 3]])
    groups = {
        "bottom-y": np.array([[0, 1], [1, 1]]),
        "top-y": np.array([[2, 1], [3, 1]]),
        "left-x": np.array([[0, 0], [3, 0]]),
        "right-x": np.array([[1, 0], [2, 0]]),
    }
    return fem.Mesh(nodes=nodes, elements=elements, groups=groups)


def synthetic_dataset(mesh, rng, n_steps=2, scale=0.2):
    steps = []
    for t in range(n_steps):
        u = rng.normal(0.0, scale, size=(mesh.n_nodes, 2))
        reactions = {name: float(rng.normal()) for name in mesh.groups}
        steps.append(datagen.LoadStep(gamma=0.1 * (t + 1), u=u, reactions=reactions))
    return datagen.ExperimentDataset(mesh=mesh, steps=steps, provenance={})


@pytest.fixture(scope="module")
def training_data():
    mesh = meshing.training_mesh(n=12)
    truth = mat.make_model("isihara")
    ds = datagen.generate_dataset(mesh, truth, n_steps=4, gamma_max=0.5, noise=1e-4, seed=5)
    return ds


def tiny_config(**kw):
    base = dict(known="nh", hidden=2, epochs=20, lr=5e-3)
    base.update(kw)
    return training.TrainConfig(**base)


def test_truth_model_zero_loss_on_own_clean_data():
    mesh = meshing.training_mesh(n=12)
    truth = mat.make_model("isihara")
    ds = datagen.generate_dataset(mesh, truth, n_steps=3, gamma_max=0.5, noise=0.0, seed=0)
    assert training.loss(truth, ds).total <= 1e-12


def test_zero_displacement_nonzero_reactions():
    mesh = two_element_mesh()
    steps = [
        datagen.LoadStep(
            gamma=0.0,
            u=np.zeros((4, 2)),
            reactions={"bottom-y": 1.0, "top-y": -2.0, "left-x": 0.5, "right-x": 0.25},
        )
    ]
    ds = datagen.ExperimentDataset(mesh=mesh, steps=steps, provenance={})
    model = hyb.HybridModel(mat.make_model("nh"), icnn.init_params(0, 3, hidden=2))
    out = training.loss(model, ds)
    # P(I) = 0 by normalisation, so only the recorded reactions remain
    assert out.free == pytest.approx(0.0, abs=1e-20)
    assert out.fixed == pytest.approx(1.0 + 4.0 + 0.25 + 0.0625, rel=1e-12)


def test_loss_gradient_matches_finite_differences(rng):
    # end-to-end through assembly, features, network and corrections; the
    # single most important derivative check in the package
    mesh = two_element_mesh()
    ds = synthetic_dataset(mesh, rng)
    for alpha, learn in ((None, False), (0.6, True)):
        d = 3 if alpha is None else 4
        nn = icnn.init_params(3, d, hidden=2)
        model = hyb.HybridModel(mat.make_model("nh"), nn, alpha=alpha, learn_alpha=learn)
        ws = training.Workspace(ds, model)
        out, grad_theta, grad_alpha = training.loss_and_gradient(model, ws)

        vec = icnn.pack(nn)
        h = 1e-6
        for i in range(vec.size):
            vp, vm = vec.copy(), vec.copy()
            vp[i] += h
            vm[i] -= h
            mp = hyb.HybridModel(
                mat.make_model("nh"), icnn.unpack_like(nn, vp), alpha=alpha, learn_alpha=learn
            )
            mm = hyb.HybridModel(
                mat.make_model("nh"), icnn.unpack_like(nn, vm), alpha=alpha, learn_alpha=learn
            )
            fd = (training.loss(mp, ds).total - training.loss(mm, ds).total) / (2 * h)
            assert abs(grad_theta[i] - fd) < 1e-5 * max(1.0, abs(fd))

        if learn:
            mp = hyb.HybridModel(mat.make_model("nh"), nn, alpha=alpha + h, learn_alpha=True)
            mm = hyb.HybridModel(mat.make_model("nh"), nn, alpha=alpha - h, learn_alpha=True)
            fd = (training.loss(mp, ds).total - training.loss(mm, ds).total) / (2 * h)
            assert abs(grad_alpha - fd) < 1e-5 * max(1.0, abs(fd))


def test_loss_gradient_with_linear_volumetric_features(rng):
    # exercises the stress-correction tensor H and its parameter coupling
    mesh = two_element_mesh()
    ds = synthetic_dataset(mesh, rng)
    nn = icnn.init_params(1, 3, hidden=2)
    model = hyb.HybridModel(mat.make_model("nh"), nn, linear_volumetric=True)
    ws = training.Workspace(ds, model)
    _, grad_theta, _ = training.loss_and_gradient(model, ws)
    vec = icnn.pack(nn)
    h = 1e-6
    for i in range(vec.size):
        vp, vm = vec.copy(), vec.copy()
        vp[i] += h
        vm[i] -= h
        mp = hyb.HybridModel(mat.make_model("nh"), icnn.unpack_like(nn, vp), linear_volumetric=True)
        mm = hyb.HybridModel(mat.make_model("nh"), icnn.unpack_like(nn, vm), linear_volumetric=True)
        fd = (training.loss(mp, ds).total - training.loss(mm, ds).total) / (2 * h)
        assert abs(grad_theta[i] - fd) < 1e-5 * max(1.0, abs(fd))


def test_loss_invariant_under_node_permutation(rng):
    mesh = meshing.training_mesh(n=12)
    truth = mat.make_model("nh")
    ds = datagen.generate_dataset(mesh, truth, n_steps=2, gamma_max=0.4, noise=1e-4, seed=2)
    model = hyb.HybridModel(mat.make_model("nh"), icnn.init_params(1, 3, hidden=4))
    base = training.loss(model, ds).total

    perm = rng.permutation(mesh.n_nodes)
    inv = np.empty_like(perm)
    inv[perm] = np.arange(mesh.n_nodes)
    pmesh = fem.Mesh(
        nodes=mesh.nodes[perm],
        elements=inv[mesh.elements],
        groups={k: np.column_stack([inv[v[:, 0]], v[:, 1]]) for k, v in mesh.groups.items()},
    )
    psteps = [
        datagen.LoadStep(gamma=s.gamma, u=s.u[perm], reactions=s.reactions) for s in ds.steps
    ]
    pds = datagen.ExperimentDataset(mesh=pmesh, steps=psteps, provenance={})
    assert training.loss(model, pds).total == pytest.approx(base, rel=1e-12)


def test_zero_readout_reduces_to_known_loss(training_data):
    nn = icnn.init_params(4, 3, hidden=4)
    nn.readout[:] = -1e3
    model = hyb.HybridModel(mat.make_model("nh"), nn)
    hybrid_loss = training.loss(model, training_data).total
    known_loss = training.loss(mat.make_model("nh"), training_data).total
    assert hybrid_loss == pytest.approx(known_loss, rel=1e-14)


def test_loss_breakdown_consistency(training_data):
    model = hyb.HybridModel(mat.make_model("nh"), icnn.init_params(0, 3, hidden=4))
    out = training.loss(model, training_data)
    assert out.total == pytest.approx(out.free + out.fixed, rel=1e-14)
    assert out.total == pytest.approx(out.per_step.sum(), rel=1e-14)
    assert np.all(out.per_step >= 0.0)


def test_train_one_deterministic(training_data):
    a = training.train_one(training_data, tiny_config(), seed=1)
    b = training.train_one(training_data, tiny_config(), seed=1)
    assert np.array_equal(a.history, b.history)
    assert np.array_equal(icnn.pack(a.model.nn), icnn.pack(b.model.nn))
    c = training.train_one(training_data, tiny_config(), seed=2)
    assert a.history[0, 0] != c.history[0, 0]


def test_training_reduces_loss(training_data):
    run = training.train_one(training_data, tiny_config(epochs=60), seed=0)
    assert run.final_loss < run.initial_loss
    assert run.history.shape == (60, 3)


def test_ensemble_selection(training_data):
    cfg = tiny_config(epochs=10)
    best, runs = training.train_ensemble(training_data, cfg, seeds=[0, 1, 2])
    finals = [r.final_loss for r in runs]
    assert best.final_loss == min(finals)
    solo, _ = training.train_ensemble(training_data, cfg, seeds=[5])
    assert solo.seed == 5


def test_ensemble_never_picks_sabotaged_run(training_data):
    # a run with an absurd learning rate must lose to any sane run
    sane = training.train_one(training_data, tiny_config(epochs=15), seed=0)
    wild = training.train_one(training_data, tiny_config(epochs=15, lr=10.0), seed=1)
    assert sane.final_loss < wild.final_loss


def test_ensemble_requires_seeds(training_data):
    with pytest.raises(training.EnsembleError):
        training.train_ensemble(training_data, tiny_config(), seeds=[])


def test_nan_abort_has_diagnostics():
    mesh = two_element_mesh()
    rng = np.random.default_rng(0)
    ds = synthetic_dataset(mesh, rng)
    cfg = tiny_config(epochs=5, lr=1e100)
    with pytest.raises(training.TrainingDivergedError, match="epoch"):
        training.train_one(ds, cfg, seed=0)


def test_loss_history_csv(tmp_path, training_data):
    run = training.train_one(training_data, tiny_config(epochs=5), seed=3)
    path = tmp_path / "loss.csv"
    training.save_loss_history(run, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,total,free,fixed"
    assert len(lines) == 6
    total = float(lines[1].split(",")[1])
    assert total == run.history[0, 0]
