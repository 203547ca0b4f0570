"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import itertools
import json
import math
import time

import numpy as np

from dysalign.align import (PASS_INSERTED, PASS_REMOVED, FcsaNetwork, TransitionModel, backward_bound,
                            consistency_loss, ctc_loss, emission_grid, fcsa_backward, fcsa_forward, forward_bound,
                            lcs_align, monotonic_forward, pre_alignment_loss, sample_offsets, sample_token_embeddings)
from dysalign.cli import main
from dysalign.core import (Alignment, DysfluencyAnnotation, DysfluencyType, decode_matrix, encode_matrix,
                           parse_annotations, serialize_annotations)
from dysalign.gestural import (GesturalEncoder, GesturalNoise, GesturalScores, FlowConfig, VectorField, flow_loss,
                               flow_path, pit_loss)
from dysalign.grad import Parameter, gradient_check
from dysalign.metrics import dper, ratio, scaling_factors
from dysalign.model import AlignerModel
from dysalign.simulate import MULTI_COMBOS, SimulationConfig, corpus_generate, demo_texts, simulate_corpus

from oracles import ctc_brute_force, monotonic_brute_force, random_grid


def test_criterion_01_scaling_factors(criterion):
    cases = [([89.0, 89.2, 90.8], 0.56), ([92.3, 93.7, 95.8], 1.19), ([37.8, 36.0, 33.6], -1.44)]
    errs = [abs(scaling_factors(r) - sf) for r, sf in cases]
    criterion(1, "scaling factors 0.56 / 1.19 / -1.44", max(errs) < 1e-9, f"max error {max(errs):.1e}")


def test_criterion_02_ratio(criterion):
    value = round(100 * ratio(8.7, 11.9), 1)
    criterion(2, "Ratio 8.7 / 11.9 = 73.1%", value == 73.1, f"{value}%")


def test_criterion_03_oracle_equivalence(criterion):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst, grids = 0.0, 0
    for T in range(1, 6):
        for L in range(1, 4):
            for _ in range(8):
                Y = random_grid(rng, T, L)
                worst = max(worst, abs(monotonic_forward(Y)[-1, -1] - monotonic_brute_force(Y)))
                grids += 1
    ctc_grids = 0
    targets = [t for n in (1, 2, 3) for t in itertools.product((1, 2, 3), repeat=n)]
    for T in range(1, 6):
        for target in targets:
            if len(target) + sum(a == b for a, b in zip(target, target[1:])) > T:
                continue
            Y = random_grid(rng, T, 4)
            worst = max(worst, abs(ctc_loss(Y, list(target)).item() - ctc_brute_force(Y, target)))
            ctc_grids += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and grids >= 100 and ctc_grids >= 100 and elapsed < 10
    criterion(3, "monotonic and CTC equal brute-force enumeration", ok,
              f"{grids} monotonic + {ctc_grids} CTC grids, max error {worst:.1e}, {elapsed:.1f}s")


def _gradient_suite():
    r = np.random.default_rng(0)
    errors = {}

    K, T = 2, 8
    enc = GesturalEncoder(K, T, np.random.default_rng(1))
    X = r.normal(size=(12, T))
    gnoise = GesturalNoise.draw(K, T, np.random.default_rng(2))
    errors["L_KL"] = gradient_check(lambda: enc(X, gnoise, relaxed=True).kl(), enc.parameters())

    field = VectorField(3, 2, r, FlowConfig(hidden=6))
    H = Parameter(r.normal(size=(3, 5)), "H")
    x_hat, x0 = r.normal(size=(2, 5)), r.normal(size=(2, 5))
    errors["L_FLOW"] = gradient_check(lambda: flow_loss(H, x_hat, 0.35, x0, field), [H] + field.parameters())

    Tg, Lg, D = 4, 3, 5
    net = FcsaNetwork(r)
    trans = TransitionModel(D, r)
    tau = r.normal(size=(Tg, D))
    mu = Parameter(r.normal(size=(Lg, D)) * 0.5, "mu")
    rs = Parameter(np.full((Lg, D), -1.0), "rs")
    enoise = r.normal(size=(Lg, D))
    fo, bo = sample_offsets(forward_bound(Tg, Lg), r), sample_offsets(backward_bound(Tg, Lg), r)

    def pre():
        Y = emission_grid(tau, mu, rs, enoise)
        phi = trans.matrix(sample_token_embeddings(mu, rs, enoise))
        return pre_alignment_loss(fcsa_forward(Y, phi, net, fo).scores, fcsa_backward(Y, phi, net, bo).scores, Y)

    errors["L_PRE"] = gradient_check(pre, net.parameters() + trans.parameters() + [mu, rs])

    model = AlignerModel(r, dim=4)
    ftau = r.normal(size=(5, 4))
    errors["L_POST"] = gradient_check(lambda: model.post_loss(ftau, [5, 9, 5]), [model.mu])

    ctau = Parameter(r.normal(size=(5, 3)), "tau")
    words = Parameter(r.normal(size=(2, 3)), "words")
    align = Alignment(((0, 1), (3, 4)), 5)
    errors["L_CON"] = gradient_check(lambda: consistency_loss(align, ctau, words), [ctau, words])

    Hp = Parameter(r.normal(size=(2, 6)), "H")
    Xp, Gk = r.normal(size=(12, 6)), r.normal(size=(3, 12, 2))
    errors["L_PIT"] = gradient_check(lambda: pit_loss(Xp, Hp, Gk), [Hp])
    return errors


def test_criterion_04_gradient_suite(criterion):
    start = time.perf_counter()
    errors = _gradient_suite()
    elapsed = time.perf_counter() - start
    ok = all(e < 1e-4 for e in errors.values()) and len(errors) == 6 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errors.items()) + f", {elapsed:.1f}s"
    criterion(4, "central-difference checks for all six losses", ok, detail)


def test_criterion_05_fcsa_structure(criterion):
    rng = np.random.default_rng(5)
    net = FcsaNetwork(rng)
    worst_mirror, ok = 0.0, True
    for T in range(1, 7):
        for L in range(1, 6):
            Y = random_grid(rng, T, L)
            phi = rng.uniform(0.05, 1.0, size=(L, L))
            fo, bo = sample_offsets(forward_bound(T, L), rng), sample_offsets(backward_bound(T, L), rng)
            a, b = fcsa_forward(Y, phi, net, fo), fcsa_backward(Y, phi, net, bo)
            for grid in (a, b):
                ok &= bool(np.all(grid.stacks[4] == PASS_INSERTED) and np.all(grid.stacks[5] == PASS_REMOVED))
                ok &= bool(np.all((grid.stacks > 0) & (grid.stacks <= 1)))
                ok &= bool(np.all((grid.values > 0) & (grid.values <= 1)))
            mirrored = fcsa_forward(Y[::-1, ::-1], phi[::-1, ::-1], net, bo.mirrored()).values[::-1, ::-1]
            worst_mirror = max(worst_mirror, float(np.max(np.abs(b.values - mirrored))))
    ok &= worst_mirror <= 1e-10
    criterion(5, "FCSA pass stacks, (0,1] range, mirrored backward", ok, f"mirror error {worst_mirror:.1e}")


def test_criterion_06_lcs_worked_example(criterion):
    text = ["P", "L", "IY", "Z"]
    speech = ["P", "P", "L", "EY", "SIL-EY", "Z"]
    realizes = {"P": "P", "L": "L", "EY": "IY", "SIL-EY": "IY", "Z": "Z"}
    Y = np.array([[0.97 if realizes[s] == t else 0.01 for t in text] for s in speech])
    spans = lcs_align(Y).alignment.spans
    groups = [(text[j], [speech[i] for i in range(s, e + 1)]) for j, (s, e) in enumerate(spans)]
    expected = [("P", ["P", "P"]), ("L", ["L"]), ("IY", ["EY", "SIL-EY"]), ("Z", ["Z"])]
    criterion(6, "LCS worked alignment", groups == expected, str(groups))


def test_criterion_07_dper(criterion):
    hand = [
        dper([("P", 0.1), ("L", 0.2)], [("P", 0.1), ("L", 0.2)]) == 0.0,
        dper([("P", 0.1), ("L", 0.2)], [("P", 0.1)]) == 1.0,
        dper([("P", 0.1), ("L", 0.2)], [("P", 0.2), ("L", 0.2)]) == 0.0,
    ]
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        ref = [(str(s), d) for s, d in zip(rng.integers(0, 4, rng.integers(1, 8)), rng.uniform(0.02, 1.0, 8))]
        hyp = [(str(s), d) for s, d in zip(rng.integers(0, 4, rng.integers(1, 8)), rng.uniform(0.02, 1.0, 8))]
        k = rng.uniform(0.01, 100.0)
        a = dper(ref, hyp)
        b = dper([(s, d * k) for s, d in ref], [(s, d * k) for s, d in hyp])
        worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    ok = all(hand) and worst <= 1e-9
    criterion(7, "dPER hand cases and duration-scale invariance", ok, f"hand {hand}, max drift {worst:.1e}")


def test_criterion_08_flow_identities(criterion):
    rng = np.random.default_rng(8)
    eps = np.finfo(float).eps
    ok = True
    for _ in range(200):
        x0, x = rng.normal(size=7), rng.normal(size=7)
        sigma = rng.uniform(0.001, 0.5)
        xt0, u0 = flow_path(x0, x, 0.0, sigma)
        xt1, u1 = flow_path(x0, x, 1.0, sigma)
        _, um = flow_path(x0, x, float(rng.uniform()), sigma)
        scale = 4 * eps * (1 + np.abs(x0) + np.abs(x))
        ok &= bool(np.array_equal(xt0, x0))
        ok &= bool(np.all(np.abs(xt1 - (sigma * x0 + x)) <= scale))
        ok &= bool(np.array_equal(u0, u1) and np.array_equal(u0, um))
    criterion(8, "flow path endpoints and constant velocity", ok, "200 random vector pairs")


def test_criterion_09_simulator(criterion, tmp_path):
    start = time.perf_counter()
    texts = demo_texts()
    m1 = corpus_generate(texts, SimulationConfig(), tmp_path / "a", n=1000)
    corpus_generate(texts, SimulationConfig(), tmp_path / "b", n=1000)
    identical = (tmp_path / "a/manifest.json").read_bytes() == (tmp_path / "b/manifest.json").read_bytes()
    identical &= all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
                     for e in m1["utterances"] for f in e["files"].values())
    multi = simulate_corpus(texts, SimulationConfig(mode="multi", seed=3), n=500)
    combos = {tuple(e.dysfluency_type for e in u.events) for u in multi}
    elapsed = time.perf_counter() - start
    mean = m1["mean_events"]
    ok = abs(mean - 2.51) <= 0.1 and combos <= set(MULTI_COMBOS) and identical and elapsed < 30
    criterion(9, "simulator mean, Multi combos, byte-identical reruns", ok,
              f"mean {mean:.3f}, {len(combos)} combos seen, identical={identical}, {elapsed:.1f}s")


def test_criterion_10_end_to_end(criterion, tmp_path):
    start = time.perf_counter()
    texts = demo_texts()
    (tmp_path / "train.txt").write_text("\n".join(texts[:16]) + "\n")
    (tmp_path / "held.txt").write_text("\n".join(texts[16:]) + "\n")
    w = str(tmp_path)
    codes = [
        main(["simulate", "--in", f"{w}/train.txt", "--out", f"{w}/corpus"]),
        main(["train", "--in", f"{w}/corpus", "--out", f"{w}/model", "--steps", "200"]),
        main(["simulate", "--seed", "7", "--n", "20", "--in", f"{w}/held.txt", "--out", f"{w}/held"]),
        main(["align", "--in", f"{w}/held", "--model", f"{w}/model", "--out", f"{w}/pred"]),
        main(["evaluate", "--in", f"{w}/held", "--pred", f"{w}/pred", "--out", f"{w}/metrics.json"]),
    ]
    elapsed = time.perf_counter() - start
    info = json.loads((tmp_path / "model/train.json").read_text())
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    losses = info["losses"]
    decreased = (info["final_objective"] < info["initial_objective"]
                 and np.mean(losses[-20:]) < np.mean(losses[:20]))
    ok = (codes == [0] * 5 and decreased and metrics["matching_score"] >= 0.6 and metrics["strict_f1"] >= 0.6
          and elapsed < 300)
    criterion(10, "200-step training, held-out MS and strict F1 >= 0.6", ok,
              f"objective {info['initial_objective']:.1f} -> {info['final_objective']:.1f}, "
              f"MS {metrics['matching_score']:.3f}, strict F1 {metrics['strict_f1']:.3f}, "
              f"no-detection MS 0.0, {elapsed:.1f}s")


def test_criterion_11_roundtrips(criterion):
    rng = np.random.default_rng(11)
    ok = True
    for _ in range(200):
        m = rng.normal(size=tuple(rng.integers(0, 7, 2))).astype(np.float32)
        blob = encode_matrix(m)
        back = decode_matrix(blob)
        ok &= bool(np.array_equal(back, m) and encode_matrix(back) == blob)

        types = list(DysfluencyType)
        anns = []
        for _ in range(rng.integers(0, 5)):
            s = int(rng.integers(0, 1000))
            end = None if rng.random() < 0.3 else s + int(rng.integers(5, 200))
            anns.append(DysfluencyAnnotation(f"w{rng.integers(100)}", types[rng.integers(len(types))], s, end))
        text = serialize_annotations(anns)
        ok &= parse_annotations(text) == anns and serialize_annotations(parse_annotations(text)) == text

        H = rng.normal(size=(int(rng.integers(1, 6)), int(rng.integers(1, 20))))
        H[rng.random(H.shape) < 0.7] = 0.0
        S = GesturalScores.from_dense(H)
        ok &= bool(np.array_equal(S.to_dense(), H))
        ok &= bool(np.array_equal(GesturalScores.from_json(S.to_json()).to_dense(), H))
    criterion(11, "NAFM, annotation JSON and gestural score round-trips", ok, "200 random cases each")


def test_no_detection_baseline_scores_zero():
    """The comparison point quoted in criterion 10."""
    from dysalign.metrics import corpus_detection_scores

    utts = simulate_corpus(demo_texts()[16:], SimulationConfig(seed=7), n=20)
    scores = corpus_detection_scores([[] for _ in utts], [u.annotations for u in utts])
    assert scores["matching_score"] == 0.0 and not math.isnan(scores["strict_f1"])
