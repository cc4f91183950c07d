"""End-to-end acceptance battery: one test per release criterion, each
printing a single PASS/FAIL line with the measured quantities before
asserting. The slow fixtures (toy and surrogate training runs, the variant
sweep) are module-scoped and shared across criteria."""

import itertools
import time

import numpy as np
import pytest

from conftest import TOY_LEVEL_PROBS, toy_dataset
from test_autodiff import CASES, _fd_check
from test_autodiff import (
    test_second_order_matches_finite_differences_of_first_gradient as _second_order_check,
)
from test_evalsuite import _jsd_bits_quadrature, _pairwise
from test_gan import _random_batch, naive_generator_loss, small_cfg
from test_learners import _ks_scan

from pnrgan import cli, encoding, evalsuite, gan, learners
from pnrgan.data import make_surrogate, split_dataset
from pnrgan.encoding import fit_plan
from pnrgan.rng import Stream

# toy-run checkpoints observed by the local-discrepancy trajectory criterion
JSD_CHECKPOINTS = (10, 300, 2000)
SWEEP_ITERS = 5000


def _line(num: int, name: str, ok: bool, detail: str) -> bool:
    print(f"\nacceptance {num:02d} {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    return ok


# ----------------------------------------------------------- slow fixtures


@pytest.fixture(scope="module")
def toy_run():
    """Tuned-defaults training on the toy mixture task, with parameter
    snapshots along the way."""
    train = toy_dataset(2000, 901)
    plan = fit_plan(train)
    snaps = {}

    def snap(it, model):
        if it in JSD_CHECKPOINTS:
            snaps[it] = model.clone()

    t0 = time.perf_counter()
    model, metrics = gan.train(train, gan.GanConfig(iters=2000), plan, 6,
                               on_iteration=snap)
    elapsed = time.perf_counter() - t0
    untrained, _ = gan.train(train, gan.GanConfig(iters=0), plan, 6)
    return {
        "train": train,
        "plan": plan,
        "model": model,
        "untrained": untrained,
        "snaps": snaps,
        "elapsed": elapsed,
    }


@pytest.fixture(scope="module")
def surrogate_run():
    """Tuned-defaults training on the 10000-row surrogate split."""
    full = make_surrogate(10000, 911)
    train, test = split_dataset(full, 0.2, 912)
    plan = fit_plan(train)
    t0 = time.perf_counter()
    model, _ = gan.train(train, gan.GanConfig(iters=5000), plan, 953)
    elapsed = time.perf_counter() - t0
    return {
        "train": train,
        "test": test,
        "plan": plan,
        "model": model,
        "elapsed": elapsed,
    }


@pytest.fixture(scope="module")
def sweep_scores(surrogate_run):
    """rf separation score per variant, trained on the surrogate split."""
    train, test = surrogate_run["train"], surrogate_run["test"]
    plan = surrogate_run["plan"]
    scores = {}
    for variant in cli.VARIANTS:
        mode, enc, crossed = cli._VARIANT_SETTINGS[variant]
        cfg = gan.GanConfig(mode=mode, encoding=enc,
                            cross_layers=2 if crossed else 0, iters=SWEEP_ITERS)
        model, _ = gan.train(train, cfg, plan, 921)
        synth = gan.generate(model, len(test), Stream(921).child(f"gen_{variant}"))
        scores[variant] = evalsuite.two_sample_score(
            test, synth, "rf", seed=Stream(921).child(f"score_{variant}"))
    return scores


# -------------------------------------------------------------- criteria


def test_acceptance_01_gradient_correctness():
    t0 = time.perf_counter()
    failed = None
    try:
        for name, make_out, shapes, positive in CASES:
            for seed in range(10):
                _fd_check(make_out, shapes, seed, tol=1e-6, positive=positive)
        _second_order_check()  # penalty-path second order, relative 1e-4
    except AssertionError as exc:
        failed = str(exc).splitlines()[0]
    elapsed = time.perf_counter() - t0
    ok = failed is None and elapsed < 30.0
    detail = (f"{len(CASES)} ops x 10 seeds + second order in {elapsed:.1f}s"
              if failed is None else failed)
    assert _line(1, "gradient correctness", ok, detail)


def test_acceptance_02_generator_loss_oracle():
    d = toy_dataset(400, 7)
    plan = fit_plan(d)
    cfg = small_cfg()
    critic = gan.init_critic(plan, cfg, Stream(21))
    worst = 0.0
    for trial in range(20):
        s = Stream(1000 + trial)
        batches = [_random_batch(plan, s.child(i), 8) for i in range(4)]
        lg, _, _ = gan.cramer_losses(*batches, critic, plan, cfg, seed=trial)
        worst = max(worst, abs(lg - naive_generator_loss(*batches, critic, plan, cfg)))
    assert _line(2, "generator loss oracle", worst <= 1e-9,
                 f"20 batches of 8, worst gap {worst:.2e}")


def test_acceptance_03_codec_round_trips():
    d = make_surrogate(1000, 41)
    assert np.isnan(d.numeric("Age")).any() and (d.codes("Gender") == -1).any()
    plan = fit_plan(d)
    back = encoding.decode(encoding.encode(d, plan, 42), plan)
    exact = all(
        np.array_equal(d.column_array(i), back.column_array(i),
                       equal_nan=bool(spec.is_numeric))
        for i, spec in enumerate(d.schema)
    )

    big = make_surrogate(10000, 43)
    big_plan = fit_plan(big)
    codec = encoding.fit_band_codec(big, big_plan)
    dec = encoding.band_decode(encoding.band_encode(big, codec, big_plan, 44),
                               codec, big_plan)
    hits = total = 0
    for spec in big.schema:
        if spec.is_numeric:
            continue
        hits += int((big.codes(spec.name) == dec.codes(spec.name)).sum())
        total += len(big)
    acc = hits / total
    assert _line(3, "codec round trips", exact and acc >= 0.99,
                 f"decode(encode) exact on 1000 rows: {exact}; band accuracy {acc:.4f}")


def test_acceptance_04_toy_convergence(toy_run):
    synth = gan.generate(toy_run["model"], 4000, 906)
    codes = synth.codes("Level")
    worst = 0.0
    for k, want in enumerate(TOY_LEVEL_PROBS):
        worst = max(worst, abs(float(np.mean(codes == k)) - want))

    real_eval = toy_dataset(2000, 903)
    before = evalsuite.two_sample_score(
        real_eval, gan.generate(toy_run["untrained"], 2000, 904), "rf", seed=905)
    after = evalsuite.two_sample_score(
        real_eval, gan.generate(toy_run["model"], 2000, 904), "rf", seed=905)
    ok = (toy_run["elapsed"] < 600.0 and worst <= 0.05
          and before >= 0.90 and after <= 0.75)
    assert _line(4, "toy convergence", ok,
                 f"{toy_run['elapsed']:.0f}s; worst level freq error {worst:.3f} "
                 f"(<= 0.05); rf score {before:.3f} (>= 0.90) -> {after:.3f} (<= 0.75)")


def test_acceptance_05_surrogate_downstream_gap(surrogate_run):
    train, test = surrogate_run["train"], surrogate_run["test"]
    synth_train = gan.generate(surrogate_run["model"], len(train), 914)
    acc_real, acc_synth = evalsuite.downstream_cross_eval(
        train, synth_train, test, "BusinessLeisure", seed=915)
    gap = acc_real - acc_synth
    ok = surrogate_run["elapsed"] < 3600.0 and gap <= 0.10
    assert _line(5, "surrogate downstream gap", ok,
                 f"{surrogate_run['elapsed']:.0f}s; rf accuracy real {acc_real:.3f} "
                 f"vs synth {acc_synth:.3f}, gap {gap:.3f} (<= 0.10)")


def test_acceptance_06_memorization(surrogate_run):
    train, test = surrogate_run["train"], surrogate_run["test"]
    model = surrogate_run["model"]
    synth = gan.generate(model, len(test), 916)
    s = Stream(917)
    q = len(test)
    train_h = evalsuite.critic_embed(
        train.take(s.child("t").subsample(len(train), q)), model, s.child("e1"))
    test_h = evalsuite.critic_embed(test, model, s.child("e2"))
    synth_h = evalsuite.critic_embed(synth, model, s.child("e3"))
    mem = evalsuite.memorization_report(synth_h, train_h, test_h)
    ok = mem.ks.p_value > 0.05 and mem.wilcoxon.p_value > 0.01
    assert _line(6, "memorization", ok,
                 f"KS p {mem.ks.p_value:.3f} (> 0.05); one-sided Wilcoxon "
                 f"p {mem.wilcoxon.p_value:.3f} (> 0.01)")


def test_acceptance_07_local_discrepancy_behavior(toy_run):
    real_eval = toy_dataset(2000, 903)
    traj = []
    for it in JSD_CHECKPOINTS:
        snap = toy_run["snaps"][it]
        synth = gan.generate(snap, 2000, 907)
        rh = evalsuite.critic_embed(real_eval, snap, 908)
        sh = evalsuite.critic_embed(synth, snap, 909)
        traj.append(evalsuite.jsd_local(rh, sh, k_nn=50)[0])

    s = Stream(71)
    null, _ = evalsuite.jsd_local(s.child("r").normals(2000)[:, None],
                                  s.child("s").normals(2000)[:, None], k_nn=50)

    oracle = _jsd_bits_quadrature(0.0, 8.0, -12.0, 20.0, 8000)
    s = Stream(81)
    far, _ = evalsuite.jsd_local(s.child("r").normals(2000)[:, None],
                                 (8.0 + s.child("s").normals(2000))[:, None], k_nn=50)
    ok = (traj[0] > traj[1] > traj[2] and null <= 0.05
          and far >= 0.9 and abs(far - oracle) <= 0.1)
    assert _line(7, "local discrepancy behavior", ok,
                 f"trajectory {' > '.join(f'{v:.3f}' for v in traj)}; null {null:.3f}; "
                 f"near-disjoint {far:.3f} vs quadrature {oracle:.3f}")


def test_acceptance_08_statistical_test_oracles():
    s = Stream(61)
    ks_exact = True
    for trial in range(50):
        na = int(s.child(f"na{trial}").integers(2, 9, 1)[0])
        nb = int(s.child(f"nb{trial}").integers(2, 9, 1)[0])
        a = np.floor(s.child(f"a{trial}").uniforms(na) * 8.0) / 2.0
        b = np.floor(s.child(f"b{trial}").uniforms(nb) * 8.0) / 2.0
        if learners.ks_two_sample(a, b).statistic != _ks_scan(a, b):
            ks_exact = False

    worst = 0.0
    for trial in range(5):
        d = s.child(f"w{trial}").normals(10) - 0.8
        if np.all(d == 0.0):
            continue
        res = learners.wilcoxon_one_sided(d)
        count = 0
        for signs in itertools.product((0, 1), repeat=10):
            if sum(r for r, bit in zip(range(1, 11), signs) if bit) <= res.statistic:
                count += 1
        worst = max(worst, abs(res.p_value - count / 1024.0))
    assert _line(8, "statistical test oracles", ks_exact and worst <= 0.03,
                 f"KS exact on 50 instances: {ks_exact}; Wilcoxon within "
                 f"{worst:.4f} of enumeration")


def test_acceptance_09_mds_fidelity():
    s = Stream(91)
    flat = np.column_stack([3.0 * s.child("x").uniforms(40), s.child("y").uniforms(40)])
    basis = np.linalg.qr(s.child("q").normals(100).reshape(10, 10))[0][:, :2]
    pts = flat @ basis.T + s.child("shift").uniforms(10)
    coords = evalsuite.mds_2d(pts)
    want = _pairwise(flat)
    got = _pairwise(coords)
    rel = np.abs(got - want).max() / want.max()
    assert _line(9, "mds fidelity", rel <= 1e-8,
                 f"planar-in-10D relative distance error {rel:.2e}")


def test_acceptance_10_variant_sweep_ordering(sweep_scores):
    band_low = min(sweep_scores[v] for v in ("crgan-num", "wgan-num"))
    embed_high = max(sweep_scores[v] for v in ("crgan-cnet", "crgan-fc", "wgan-fc"))
    detail = ", ".join(f"{v} {sweep_scores[v]:.3f}" for v in cli.VARIANTS)
    assert _line(10, "variant sweep ordering", band_low > embed_high,
                 f"{detail}; band floor {band_low:.3f} vs embedding "
                 f"ceiling {embed_high:.3f}")


def test_acceptance_11_determinism(tmp_path):
    cfgp = tmp_path / "small.cfg"
    cfgp.write_text("gen_widths = 8,16\nh_widths = 8,16\nh_out = 8\n"
                    "batch_size = 32\nnoise_dim = 4\n")

    def run(*argv):
        assert cli.main([str(a) for a in argv]) == 0

    outs = {}
    for rep in ("a", "b"):
        root = tmp_path / rep
        root.mkdir()
        run("synth-data", "--rows", 240, "--seed", 5, "--out", root / "d.csv", "--quiet")
        run("synth-data", "--rows", 60, "--seed", 6, "--out", root / "t.csv", "--quiet")
        run("train", "--data", root / "d.csv", "--config", cfgp, "--iters", 2,
            "--seed", 11, "--out", root / "m", "--quiet")
        run("generate", root / "m", "--rows", 40, "--seed", 3,
            "--out", root / "g.csv", "--quiet")
        run("evaluate", root / "m", "--data", root / "d.csv", "--test", root / "t.csv",
            "--out", root / "rep", "--k-nn", 5, "--seed", 4, "--quiet")
        run("sweep", "--data", root / "d.csv", "--test", root / "t.csv",
            "--config", cfgp, "--iters", 1, "--seed", 2,
            "--out", root / "table.csv", "--quiet")
        outs[rep] = [
            root / "d.csv", root / "d.csv.schema", root / "m.params", root / "m.cfg",
            root / "m.plan.txt", root / "m.metrics.csv", root / "g.csv",
            root / "rep" / "report.json", root / "rep" / "mds_coords.csv",
            root / "rep" / "nn_distances.csv", root / "table.csv",
        ]
    mismatched = [pa.name for pa, pb in zip(outs["a"], outs["b"])
                  if pa.read_bytes() != pb.read_bytes()]
    assert _line(11, "determinism", not mismatched,
                 f"{len(outs['a'])} output files compared across reruns; "
                 f"mismatches: {mismatched or 'none'}")
