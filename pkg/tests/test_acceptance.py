"""Acceptance criteria, one test each, every one printing a PASS/FAIL line.

Each criterion prints one line, and all lines are repeated in the pytest
terminal summary.
The multi-seed experiments dominate the runtime of the whole test suite.
"""

import json
import math
import time

import numpy as np
import pytest
import yaml

from gradpie.abbo import (ExactGradient, L1Target, RunConfig, Surrogate, offline_optimize,
                          offline_train, online_optimize, random_search_baseline, train_surrogate)
from gradpie.blackbox import (Cnon, CnonSystem, OpticalSystem, OpticalWavefront, analytic_blackbox,
                              cnon_evolve, propagate)
from gradpie.blackbox.optics import grid_coords, target_modulus
from gradpie.cli import main as cli_main, read_trajectory
from gradpie.data import Dataset, NormStats
from gradpie.losses import gradpie_loss
from gradpie.metrics import jacobian_rowdiff, row_norm, surrogate_gradient_eval
from gradpie.nn import MlpSurrogate

from conftest import ACCEPTANCE_LINES

CNON_ARCH = [256, 256]
K_SWEEP = (4, 8, 16)

# gradient-quality protocol (criterion 1)
GQ_T_END = 0.5
GQ_EPOCHS = 100
GQ_BATCH = 128
GQ_LR = 3e-3
GQ_SEEDS = range(5)

# online protocol (criteria 2 and 7)
ONLINE_T_END = 0.5
ONLINE_SEEDS = list(range(10))
ONLINE_RUN = {"tau": 200, "hidden": CNON_ARCH, "k": 32, "l_epochs": 5, "batch_size": 4096,
              "eta1": 1e-3, "eta2": 0.05, "n_init": 100, "n_best": 5, "sigma": 0.05}

# offline protocol (criterion 3)
OFFLINE_T_END = 0.5
OFFLINE_LAMBDAS = (0.50, 0.55, 0.70)
OFFLINE_SEEDS = range(10)


def report(criterion, ok, detail):
    """Print and record one criterion line; the lines are repeated in the pytest summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    print("\n" + line)
    ACCEPTANCE_LINES.append(line)
    return ok


# -- criterion 1 ----------------------------------------------------------------------

def gradient_quality(n, seed):
    """Mean (rel_err, cos_sim) per loss/K for one seeded system and dataset."""
    bb = Cnon(CnonSystem.random(n, seed=seed, t_end=GQ_T_END))
    rng = np.random.default_rng(1000 + seed)
    X = rng.standard_normal((1000, n))
    dataset = Dataset(X, bb(X))
    test = rng.standard_normal((200, n))
    objective = L1Target(np.full(n, 0.5))
    out = {}
    for loss, k in [("mae", 1)] + [("gradpie", k) for k in K_SWEEP]:
        cfg = RunConfig(hidden=CNON_ARCH, k=k, l_epochs=GQ_EPOCHS, eta1=GQ_LR,
                        batch_size=GQ_BATCH, seed=seed)
        surrogate, _ = offline_train(dataset, cfg, loss)
        rep = surrogate_gradient_eval(surrogate, objective, bb, test)
        out[(loss, k)] = (rep.relative_error, rep.cosine_similarity)
    return out


def test_criterion_1_gradient_quality():
    start = time.perf_counter()
    verdicts, details = [], []
    for n in (7, 10):
        runs = [gradient_quality(n, seed) for seed in GQ_SEEDS]
        mean = {key: np.mean([r[key] for r in runs], axis=0) for key in runs[0]}
        rel_mae, cos_mae = mean[("mae", 1)]
        best_k = min(K_SWEEP, key=lambda k: mean[("gradpie", k)][0])
        rel_gp, cos_gp = mean[("gradpie", best_k)]
        rel_drop = 1 - rel_gp / rel_mae
        cos_gain = cos_gp / cos_mae - 1
        verdicts.append(rel_drop >= 0.15 and cos_gain >= 0.05)
        details.append(f"D={n} K={best_k} rel {rel_gp:.3f} vs {rel_mae:.3f} ({rel_drop:+.1%}), "
                       f"cos {cos_gp:.3f} vs {cos_mae:.3f} ({cos_gain:+.1%})")
    elapsed = time.perf_counter() - start
    ok = all(verdicts) and elapsed <= 15 * 60
    assert report("1", ok, "; ".join(details) + f"; {elapsed / 60:.1f} min (limit 15)")


# -- criteria 2 and 7 (through the CLI) ----------------------------------------------------

@pytest.fixture(scope="module")
def online_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("online")
    summaries = {}
    for n_s in (0, 1):
        spec = {"task": "cnon", "mode": "online", "seeds": ONLINE_SEEDS,
                "methods": ["exact", "gradpie", "mae"], "comparator": "mae",
                "task_params": {"n": 10, "t_end": ONLINE_T_END},
                "run": {**ONLINE_RUN, "n_s": n_s}}
        path = root / f"cnon_ns{n_s}.yaml"
        path.write_text(yaml.safe_dump(spec))
        out = root / f"ns{n_s}"
        status = cli_main(["run", str(path), "--out", str(out), "--deterministic"])
        summaries[n_s] = (status, out, json.loads((out / "summary.json").read_text()))
    return summaries


def test_criterion_2_online_cnon(online_runs):
    verdicts, details = [], []
    for n_s, (status, _, summary) in online_runs.items():
        m = {name: agg["checkpoints"]["200"]["mean"] for name, agg in summary["methods"].items()}
        ok = status == 0 and m["exact"] <= m["gradpie"] <= 0.85 * m["mae"]
        verdicts.append(ok)
        details.append(f"N_s={n_s}: exact {m['exact']:.4f}, locality {m['gradpie']:.4f}, "
                       f"base {m['mae']:.4f} (ratio {m['gradpie'] / m['mae']:.2f})")
    assert report("2", all(verdicts), "; ".join(details))


def test_criterion_7_budget_statistic(online_runs):
    verdicts = []
    detail = []
    for n_s, (_, out, summary) in online_runs.items():
        budget = summary.get("budget", {})
        curves = {}
        for method in ("exact", "gradpie", "mae"):
            trajs = [read_trajectory(out / f"{method}_seed{s}.csv") for s in ONLINE_SEEDS]
            curves[method] = (trajs[0]["iter"], np.mean([t["best_objective"] for t in trajs], axis=0))
        target = curves["mae"][1][-1]
        expected = {}
        for method, (iters, curve) in curves.items():
            hit = np.flatnonzero(curve <= target)
            expected[method] = int(iters[hit[0]]) if hit.size else None
        got = budget.get("first_match_iteration")
        verdicts.append(got == expected and math.isclose(budget.get("target_mean", np.nan), target))
        detail.append(f"N_s={n_s}: {got}")
    assert report("7", all(verdicts), "first iteration matching the base model's final mean, "
                  + "; ".join(detail))


# -- criterion 3 --------------------------------------------------------------------------

def test_criterion_3_offline_cnon():
    n = 7
    system = CnonSystem.random(n, seed=0, t_end=OFFLINE_T_END)
    wins = {lam: 0 for lam in OFFLINE_LAMBDAS}
    finals = {lam: {"exact": [], "gradpie": [], "mae": []} for lam in OFFLINE_LAMBDAS}
    for seed in OFFLINE_SEEDS:
        bb = Cnon(system)
        rng = np.random.default_rng([seed, 2])
        X = rng.standard_normal((1000, n))
        dataset = Dataset(X, bb(X))
        sources = {"exact": ExactGradient(bb)}
        for loss in ("gradpie", "mae"):
            cfg = RunConfig(hidden=CNON_ARCH, k=8, l_epochs=GQ_EPOCHS, eta1=GQ_LR,
                            batch_size=GQ_BATCH, seed=seed)
            sources[loss], _ = offline_train(dataset, cfg, loss)
        x0 = np.random.default_rng([seed, 3]).standard_normal(n)
        for lam in OFFLINE_LAMBDAS:
            objective = L1Target(np.full(n, lam))
            for name, source in sources.items():
                res = offline_optimize(source, bb, objective, x0, RunConfig(tau=200, eta2=0.05))
                finals[lam][name].append(res.best_objective)
            wins[lam] += finals[lam]["gradpie"][-1] <= finals[lam]["mae"][-1]
    verdicts, details = [], []
    for lam in OFFLINE_LAMBDAS:
        means = {k: float(np.mean(v)) for k, v in finals[lam].items()}
        bound = means["exact"] <= min(means["gradpie"], means["mae"])
        verdicts.append(wins[lam] >= 8 and bound)
        details.append(f"lambda={lam}: locality wins {wins[lam]}/10, mean exact {means['exact']:.4f} "
                       f"locality {means['gradpie']:.4f} base {means['mae']:.4f}")
    assert report("3", all(verdicts), "; ".join(details))


# -- criterion 4 --------------------------------------------------------------------------

OWMS_SEEDS = range(10)
OWMS_RUN = {"tau": 200, "hidden": [256, 256], "layernorm": True, "k": 8, "l_epochs": 2,
            "batch_size": 4096, "eta1": 1e-3, "eta2": 0.05, "n_init": 100, "n_best": 5,
            "n_s": 1, "sigma": 0.05}


def test_criterion_4_owms():
    start = time.perf_counter()
    system = OpticalSystem(n=16)
    objective = L1Target(target_modulus(system))
    finals = {"gradpie": [], "mae": [], "random": []}
    for seed in OWMS_SEEDS:
        cfg = RunConfig(**{**OWMS_RUN, "seed": seed})
        for loss in ("gradpie", "mae"):
            res = online_optimize(OpticalWavefront(system), objective, cfg, loss=loss)
            finals[loss].append(res.best_objective)
        finals["random"].append(random_search_baseline(OpticalWavefront(system), objective, cfg)
                                .best_objective)
    elapsed = time.perf_counter() - start
    m = {k: float(np.mean(v)) for k, v in finals.items()}
    ok = m["gradpie"] < m["mae"] < m["random"] and elapsed <= 30 * 60
    assert report("4", ok, f"mean at 200 iterations: locality {m['gradpie']:.3f}, base {m['mae']:.3f}, "
                  f"random {m['random']:.3f}; {elapsed / 60:.1f} min (limit 30)")


# -- criterion 5 --------------------------------------------------------------------------

def _random_mlp(seed):
    rng = np.random.default_rng(seed)
    n_hidden = int(rng.integers(0, 4))
    dims = [int(rng.integers(1, 6))] + [int(rng.integers(2, 33)) for _ in range(n_hidden)] \
        + [int(rng.integers(1, 5))]
    model = MlpSurrogate(dims, layernorm=[bool(rng.integers(0, 2)) for _ in range(n_hidden)],
                         seed=seed)
    for k in model.params:
        if k.startswith(("gain", "shift", "b")):
            model.params[k] = rng.normal(scale=0.5, size=model.params[k].shape)
    return model, rng.standard_normal((2, dims[0])), rng.standard_normal((2, dims[-1]))


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def _fd_worst(model, X, U, h=1e-4):
    worst = 0.0
    grads = model.backward_params(X, U)
    for name, p in model.params.items():
        fd = np.empty_like(p)
        flat, fdf = p.ravel(), fd.ravel()
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = np.sum(U * model.forward(X))
            flat[i] = old - h
            fm = np.sum(U * model.forward(X))
            flat[i] = old
            fdf[i] = (fp - fm) / (2 * h)
        worst = max(worst, _rel(grads[name], fd))
    gx = model.input_gradient(X, U)
    fdx = np.empty_like(X)
    for b in range(X.shape[0]):
        for j in range(X.shape[1]):
            e = np.zeros(X.shape[1])
            e[j] = h
            fdx[b, j] = U[b] @ (model.forward(X[b] + e) - model.forward(X[b] - e)) / (2 * h)
    return max(worst, _rel(gx, fdx))


def test_criterion_5a_mlp_gradients():
    worst = max(_fd_worst(*_random_mlp(seed)) for seed in range(100))
    assert report("5a", worst < 1e-4, f"MLP gradients vs central differences over 100 configs "
                  f"(worst rel {worst:.1e} < 1e-4)")


def test_criterion_5b_offset_invariance():
    worst = 0.0
    rng = np.random.default_rng(0)
    for _ in range(200):
        y, yh = rng.standard_normal((2, 8, 3))
        yn, yhn = rng.standard_normal((2, 8, 4, 3))
        base = gradpie_loss(y, yn, yh, yhn)[0]
        c = rng.uniform(-100, 100, 3)
        worst = max(worst, abs(gradpie_loss(y + c, yn + c, yh, yhn)[0] - base),
                    abs(gradpie_loss(y, yn, yh - c, yhn - c)[0] - base))
    assert report("5b", worst <= 1e-10, f"pairwise loss offset invariance (worst {worst:.1e} <= 1e-10)")


def test_criterion_5c_rk4_order():
    system = CnonSystem.random(3, seed=2, t_end=1.0, dt=0.1)
    q0 = np.random.default_rng(5).standard_normal(3) * 0.5
    ref = cnon_evolve(CnonSystem(system.Q, system.e, 1.0, 0.1 / 64), q0)
    e1 = np.max(np.abs(cnon_evolve(system, q0) - ref))
    e2 = np.max(np.abs(cnon_evolve(CnonSystem(system.Q, system.e, 1.0, 0.05), q0) - ref))
    ratio = e1 / e2
    assert report("5c", 12 <= ratio <= 20, f"RK4 halving-step error ratio {ratio:.2f} in [12, 20]")


def _beam(z):
    return OpticalSystem(n=128, pitch=10e-6, wavelength=700e-9, waist=70e-6, z=z)


def test_criterion_5d_gaussian_waist():
    s = _beam(1.0)
    s.z = s.rayleigh_range
    out = propagate(s.input_field(), s)
    x = grid_coords(s.n, s.pitch)
    X, _ = np.meshgrid(x, x, indexing="xy")
    intensity = np.abs(out) ** 2
    w = 2.0 * np.sqrt(np.sum(intensity * X ** 2) / intensity.sum())
    err = abs(w / (s.waist * np.sqrt(2)) - 1)
    assert report("5d", err < 0.02, f"waist after one Rayleigh range {w * 1e6:.2f} um vs "
                  f"{s.waist * np.sqrt(2) * 1e6:.2f} um ({err:.2%} < 2%)")


def test_criterion_5e_power_conservation():
    s = _beam(1.0)
    s.z = s.rayleigh_range
    psi = s.input_field()
    ratio = np.sum(np.abs(propagate(psi, s)) ** 2) / np.sum(np.abs(psi) ** 2)
    assert report("5e", abs(ratio - 1) < 0.01, f"power ratio after propagation {ratio:.6f} (within 1%)")


# -- criterion 6 --------------------------------------------------------------------------

def test_criterion_6_jacobian_alignment():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 5))
    bb = analytic_blackbox("linear", A=A)
    X = rng.standard_normal((2000, 5))
    dataset = Dataset(X, bb(X))
    surrogate = Surrogate.create(5, 5, [128, 128], seed=0, stats=NormStats.identity(5, 5))
    loss = np.inf
    for lr in (3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5):
        loss = train_surrogate(surrogate, dataset, loss="gradpie", k=2, l_epochs=200,
                               batch_size=250, eta1=lr, epsilon=1e-3,
                               rng=np.random.default_rng(1))
        if loss < 1e-3:
            break
    held_out = rng.standard_normal((100, 5))
    ratio = np.mean([jacobian_rowdiff(surrogate.jacobian(x), A) for x in held_out]) / row_norm(A)
    ok = loss < 1e-3 and ratio < 0.05
    assert report("6", ok, f"training loss {loss:.2e} (< 1e-3), Jacobian row-norm ratio "
                  f"{ratio:.4f} (< 0.05)")
