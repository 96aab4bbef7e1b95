"""Acceptance suite: one test per criterion, each at its stated tolerance and time budget.

Run alone with ``pytest tests/test_acceptance.py -v``; the terminal summary
ends with one PASS/FAIL line per criterion. The identification, distortion
and leakage criteria run the desk-scale experiments (a few minutes).
"""
import hashlib
import math
import shutil
import socket
import subprocess
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest

from sparseid import bench
from sparseid import protocol as P
from sparseid.layered import Layer, LayeredCodebooks, LayerSpec, build_layers, reconstruct
from sparseid.net import parse_endpoint, remote_identify, serve_private, serve_public
from sparseid.pipeline import (
    PrivateQuery,
    RefinementThresholds,
    SearchRule,
    client_query,
    owner_prepare,
    private_refine,
    public_search,
)
from sparseid.privacy import AmbiguizationConfig, noise_count
from sparseid.search import build_index, score, score_all
from sparseid.stc import LearningConfig, Transform, code_rate, learn_transform, ternarize, ternarize_rows

criterion = pytest.mark.criterion


def sparse_objective(W, X, S):
    F = W @ X
    return float(np.sum(np.where(ternarize_rows(F.T, S).T != 0, 0.0, F) ** 2))


@criterion("encoder oracle equivalence (10 000 cases, L <= 64, < 5 s)")
def test_encoder_oracle():
    rng = np.random.default_rng(1)
    cases = []
    for i in range(10_000):
        L = int(rng.integers(1, 65))
        # half the cases use small integers so magnitude ties are common
        f = rng.integers(-4, 5, L).astype(float) if i % 2 else rng.standard_normal(L)
        cases.append((f, int(rng.integers(0, L + 1))))
    t0 = time.perf_counter()
    mismatches = 0
    for f, S in cases:
        keep = sorted(range(f.size), key=lambda j: (-abs(f[j]), j))[:S]
        want = np.zeros(f.size, dtype=np.int8)
        want[keep] = np.sign(f[keep])
        mismatches += not np.array_equal(ternarize(f, S), want)
    elapsed = time.perf_counter() - t0
    print(f"mismatches={mismatches} elapsed={elapsed:.2f}s")
    assert mismatches == 0
    assert elapsed < 5.0


@criterion("rate formula vs big-integer binomial (L <= 64, rel. error 1e-12)")
def test_rate_formula():
    worst = 0.0
    for L in range(1, 65):
        for S in range(L + 1):
            want = (math.log2(math.comb(L, S)) + S) / L
            got = code_rate(L, S)
            if want == 0:
                assert got == 0
                continue
            worst = max(worst, abs(got - want) / want)
    print(f"worst relative error {worst:.2e}")
    assert worst <= 1e-12


@criterion("transform learning: monotone objective, beats random baseline in >= 95/100 runs, < 60 s")
def test_transform_learning():
    t0 = time.perf_counter()
    wins = 0
    for run in range(100):
        X = np.random.default_rng([7, run]).standard_normal((16, 512))
        res = learn_transform(X, LearningConfig(sparsity=4, seed=run))
        obj = res.objectives
        assert all(b <= a for a, b in zip(obj, obj[1:])), f"run {run}: objective increased"
        baseline = sparse_objective(Transform.random_orthonormal(16, 16, seed=[99, run]).matrix, X, 4)
        wins += obj[-1] <= baseline
    elapsed = time.perf_counter() - t0
    print(f"wins={wins}/100 elapsed={elapsed:.1f}s")
    assert wins >= 95
    assert elapsed < 60


@criterion("successive refinement N=L=128, M=2000, K=3, S=16: strict residuals, MSE non-increasing, < 2 min")
def test_successive_refinement():
    t0 = time.perf_counter()
    X = bench.gen_database(2000, 128, 0)
    cb = build_layers(X, [LayerSpec(16, LearningConfig(max_iterations=50, seed=1)) for _ in range(3)])
    r1, r2, r3 = cb.residual_history
    every = np.arange(cb.M)
    mse = [float(np.mean(np.sum((X - reconstruct(cb, every, k)) ** 2, axis=0))) for k in (1, 2, 3)]
    elapsed = time.perf_counter() - t0
    print(f"residuals={cb.residual_history} mse={mse} elapsed={elapsed:.1f}s")
    assert r1 > r2 > r3
    assert mse[0] >= mse[1] >= mse[2]
    assert elapsed < 120


@criterion("distortion-rate: D >= 2^(-2R) at every point, within 4x of the bound at rate <= 0.3")
def test_distortion_rate():
    rows = bench.run_dr_experiment(bench.ExperimentConfig())
    for r in rows:
        print(f"{r['series']:12s} S={r['sparsity']:2d} R={r['rate']:.3f} D={r['distortion']:.4f} "
              f"bound={r['shannon']:.4f}")
    below = [r for r in rows if r["distortion"] < r["shannon"]]
    low = [r for r in rows if r["rate"] <= 0.3]
    assert not below
    assert low, "no point at rate <= 0.3"
    assert all(r["distortion"] <= 4 * r["shannon"] for r in low)


@criterion("similarity identities over 1e5 pairs; inverted index == brute force for M=1000")
def test_similarity_identities():
    rng = np.random.default_rng(3)
    L = 48
    U = rng.integers(-1, 2, (100_000, L)).astype(np.int8) * (rng.random((100_000, L)) < rng.random((100_000, 1)))
    B = rng.integers(-1, 2, (100_000, L)).astype(np.int8) * (rng.random((100_000, L)) < rng.random((100_000, 1)))
    for u, b in zip(U, B):
        s = score(u, b)
        assert score(b, u) == s
        n = score(u, -b)
        assert (n.sim, n.dis) == (s.dis, s.sim)
        assert s.sim + s.dis <= min(np.count_nonzero(u), np.count_nonzero(b))

    codes = np.zeros((1000, 64), dtype=np.int8)
    for m in range(1000):
        pos = rng.choice(64, int(rng.integers(1, 20)), replace=False)
        codes[m, pos] = rng.choice([-1, 1], pos.size)
    idx = build_index(codes)
    for _ in range(50):
        b = codes[rng.integers(1000)] * (rng.random(64) < 0.7) - (rng.random(64) < 0.1)
        b = np.clip(b, -1, 1).astype(np.int8)
        brute = np.array([[score(u, b).sim, score(u, b).dis] for u in codes])
        sim, dis = idx.query(b)
        np.testing.assert_array_equal(sim, brute[:, 0])
        np.testing.assert_array_equal(dis, brute[:, 1])
        np.testing.assert_array_equal(score_all(codes, b)[0], brute[:, 0])


@criterion("identification trends: P_id monotone in SNR, private-1 >= public, full run <= 10 min")
def test_identification_trends():
    cfg = bench.ExperimentConfig()
    t0 = time.perf_counter()
    rows = bench.run_pid_experiment(cfg)
    elapsed = time.perf_counter() - t0
    for r in rows:
        print(f"{r['stage']:10s} snr={r['snr_db']:4.1f} S/L={r['sparsity_ratio']:.4f} P_id={r['p_id']:.3f}")
    print(f"elapsed={elapsed:.0f}s")
    failures = bench.check_pid_trends(rows, cfg.snr_db)
    assert not failures, failures
    assert elapsed <= 600


@criterion("refinement nesting on 100 instances; level-k response unchanged when deeper layers are corrupted")
def test_refinement_nesting():
    for inst in range(100):
        rng = np.random.default_rng([11, inst])
        N, M, S, K = 24, 200, int(rng.integers(2, 7)), 3
        X = rng.standard_normal((N, M))
        amb = AmbiguizationConfig(noise=noise_count(0.5, N, S), permutation_seed=inst, rng_seed=inst + 1)
        assets = owner_prepare(X, [LayerSpec(S, LearningConfig(max_iterations=5, seed=inst)) for _ in range(K)], amb)
        W = assets.private.layers[0].transform
        m = int(rng.integers(M))
        y = X[:, m] + 0.5 * rng.standard_normal(N)
        b_p, y = client_query(y, W, S, noise_count(0.25, N, S), assets.public.selection, rng)
        pub = public_search(assets.public, b_p, SearchRule(gamma=int(rng.integers(5, 40))))
        budgets = tuple(sorted(rng.uniform(0.3, 2.0, K), reverse=True))
        th = RefinementThresholds(budgets)
        lists = private_refine(assets.private, PrivateQuery(y, K, pub.indices), th)
        prev = pub.as_set()
        for cl in lists:
            assert cl.as_set() <= prev
            prev = cl.as_set()

        cb = assets.private
        for k in (1, 2):
            junk = tuple(Layer(Transform.random_orthonormal(N, N, seed=j), -layer.codes, 1e3, layer.sparsity)
                         for j, layer in enumerate(cb.layers[k:]))
            corrupted = LayeredCodebooks(cb.layers[:k] + junk, cb.residual_history)
            request = P.frame(P.QUERY_PRIVATE, P.encode_private_query(k, y, pub.indices))
            assert P.PrivateService(cb, th).serve_frame(request) == P.PrivateService(corrupted, th).serve_frame(request)


@criterion("leakage ordering: public >= level-1 >= level-K reconstruction MSE over 20 batches")
def test_leakage_ordering():
    rows = bench.run_leakage_ordering(bench.ExperimentConfig())
    for r in rows:
        print(r)
    assert len(rows) == 20
    assert bench.check_leakage(rows) == []


def _raw(endpoint, data):
    with socket.create_connection(parse_endpoint(endpoint), timeout=10) as s:
        s.sendall(data)
        out = b""
        while chunk := s.recv(65536):
            out += chunk
    return out


@criterion("protocol differential: 100 loopback queries byte-identical (8-way concurrent); bad frames rejected")
def test_protocol_differential():
    X = bench.gen_database(2000, 64, 5)
    S = 8
    specs = [LayerSpec(S, LearningConfig(max_iterations=10, seed=1)) for _ in range(3)]
    assets = owner_prepare(X, specs, AmbiguizationConfig(noise_count(0.5, 64, S), 48, 2, 3))
    client = P.ClientConfig.from_bundle(assets.public, S, noise_count(0.25, 64, S), SearchRule(gamma=10), auth=3)
    local_pub = P.InProcessTransport(P.PublicService(assets.public))
    local_priv = P.InProcessTransport(P.PrivateService(assets.private))

    def make_query(q):
        rng = np.random.default_rng([21, q])
        m = int(rng.integers(2000))
        return X[:, m] + 0.3 * rng.standard_normal(64), rng

    with serve_public(assets.public, "127.0.0.1:0", background=True) as pub, \
            serve_private(assets.private, "127.0.0.1:0", background=True) as priv:
        def remote(q):
            y, rng = make_query(q)
            return remote_identify(client, (pub.endpoint, priv.endpoint), y, rng)

        with ThreadPoolExecutor(8) as ex:
            results = list(ex.map(remote, range(100)))
        for q, got in enumerate(results):
            y, rng = make_query(q)
            want = P.identify(y, client, local_pub, local_priv, rng)
            assert got.public_response == want.public_response
            assert got.private_response == want.private_response
            assert [c.indices.tolist() for c in got.private_lists] == [c.indices.tolist() for c in want.private_lists]

        bad = [
            b"NOPE\x01\x01\x00\x00\x00\x00",
            b"STID\x07\x01\x00\x00\x00\x00",
            P.HEADER.pack(P.MAGIC, 1, P.QUERY_PUBLIC, P.MAX_PAYLOAD + 1),
            P.frame(P.QUERY_PUBLIC, b"\xff\xff"),
        ]
        for frame_bytes in bad:
            for endpoint in (pub.endpoint, priv.endpoint):
                msg_type, _ = P.split_frame(_raw(endpoint, frame_bytes))
                assert msg_type == P.ERROR
        # both servers still serve correct answers afterwards
        assert remote(0).public_response == results[0].public_response


def _sparseid_cmd():
    exe = shutil.which("sparseid")
    return [exe] if exe else [sys.executable, "-m", "sparseid.cli"]


@criterion("determinism: `sparseid prepare` twice gives hash-identical asset files")
def test_prepare_determinism(tmp_path):
    config = Path(__file__).resolve().parents[1] / "configs" / "desk.json"
    text = config.read_text().replace('"../build/assets"', '"assets"')
    cfg = tmp_path / "desk.json"
    cfg.write_text(text)

    def run_and_hash(dest):
        proc = subprocess.run(_sparseid_cmd() + ["prepare", "--config", str(cfg)],
                              capture_output=True, text=True, timeout=300)
        assert proc.returncode == 0, proc.stderr
        shutil.move(tmp_path / "assets", dest)
        return {p.relative_to(dest).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
                for p in sorted(dest.rglob("*")) if p.is_file()}

    first = run_and_hash(tmp_path / "run1")
    second = run_and_hash(tmp_path / "run2")
    print(f"{len(first)} files")
    assert len(first) >= 9
    assert first == second
