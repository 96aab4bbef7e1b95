"""Synthetic-data experiments: identification rate, normalized similarity,
distortion-rate against the Gaussian bound, and the leakage ordering proxy.

Every trial ``t`` draws its item, noise direction and query-ambiguization
seed from ``SeedSequence([seed, t])``; the same draw is reused across SNRs
and sparsity levels (common random numbers), so serial and parallel runs
give identical aggregates.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .layered import LayerSpec, build_layers, reconstruct, residual_norms
from .pipeline import (
    OwnerAssets,
    PrivateQuery,
    RefinementThresholds,
    SearchRule,
    client_query,
    final_decision,
    owner_prepare,
    private_refine,
    public_search,
)
from .privacy import AmbiguizationConfig, ambiguize_codebook, noise_count
from .search import score
from .stc import LearningConfig, code_rate, encode_batch, fit_gain

Z95 = 1.959963984540054


@dataclass
class ExperimentConfig:
    M: int = 10_000
    N: int = 128
    L: int | None = None
    sparsity_ratios: tuple = (1 / 32, 1 / 16, 1 / 8, 1 / 4, 1 / 2)
    snr_db: tuple = (0.0, 3.0, 10.0)
    db_noise_fraction: float = 0.5
    query_noise_fraction: float = 0.25
    public_length: int | None = None
    K: int = 3
    gamma: int = 10
    trials: int = 1000
    seed: int = 0
    max_iterations: int = 20
    convergence_tol: float = 1e-6
    refine_budgets: tuple | None = None
    dr_M: int = 2000
    dr_sparsities: tuple = (2, 4, 8, 16)
    dr_noise_fractions: tuple = (0.0, 0.25, 0.5)
    leak_M: int = 1000
    leak_sparsity: int = 8
    leak_batches: int = 20

    def __post_init__(self):
        if self.L is None:
            self.L = self.N
        for name in ("M", "N", "L", "K", "gamma", "trials"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown experiment keys: {sorted(unknown)}")
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def sparsity(self, ratio: float) -> int:
        return max(1, min(self.L, round(ratio * self.L)))


def gen_database(M: int, N: int, seed) -> np.ndarray:
    """``(N, M)`` i.i.d. standard normal items."""
    return np.random.default_rng(seed).standard_normal((N, M))


def noise_variance(snr_db: float) -> float:
    """Per-coordinate query noise variance for a unit-variance source; ``inf`` dB gives 0."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return 10.0 ** (-snr_db / 10.0)


def gen_query(x, snr_db: float, rng) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x + math.sqrt(noise_variance(snr_db)) * rng.standard_normal(x.shape)


def shannon_dr(rate: float, variance: float = 1.0) -> float:
    """Distortion-rate function ``variance * 2^(-2 rate)`` of an i.i.d. Gaussian source."""
    if rate < 0:
        raise ValueError("rate must be >= 0")
    return variance * 2.0 ** (-2.0 * rate)


def wilson_interval(hits: int, n: int, z: float = Z95):
    if n == 0:
        return 0.0, 1.0
    p = hits / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return max(0.0, centre - half), min(1.0, centre + half)


def not_below(p_hi: float, n_hi: int, p_lo: float, n_lo: int, z: float = Z95) -> bool:
    """``p_hi >= p_lo`` up to a two-proportion 95% margin."""
    se = math.sqrt(p_hi * (1 - p_hi) / n_hi + p_lo * (1 - p_lo) / n_lo)
    return p_hi - p_lo >= -z * se


def _layer_specs(cfg: ExperimentConfig, S: int, K: int):
    learning = LearningConfig(
        sparsity=S,
        max_iterations=cfg.max_iterations,
        convergence_tol=cfg.convergence_tol,
        seed=cfg.seed + 1,
    )
    return [LayerSpec(S, learning) for _ in range(K)]


def _prepare(cfg: ExperimentConfig, X, S: int, K: int, noise_fraction: float) -> OwnerAssets:
    amb = AmbiguizationConfig(
        noise=noise_count(noise_fraction, cfg.L, S),
        public_length=cfg.public_length,
        permutation_seed=cfg.seed + 2,
        rng_seed=cfg.seed + 3,
    )
    return owner_prepare(X, _layer_specs(cfg, S, K), amb)


def _trial(cfg: ExperimentConfig, M: int, t: int):
    rng = np.random.default_rng([cfg.seed, t])
    m = int(rng.integers(M))
    z = rng.standard_normal(cfg.N)
    qseed = int(rng.integers(2**63))
    return m, z, qseed


def run_pid_experiment(cfg: ExperimentConfig) -> list:
    """Identification rate per sparsity ratio and SNR, at the public stage and private levels 1..K.

    Public P_id is the rate at which the true item is in the top-gamma public
    list; private P_id at level k is the rate at which it is the nearest
    candidate of the level-k list.
    """
    X = gen_database(cfg.M, cfg.N, cfg.seed)
    rule = SearchRule(gamma=cfg.gamma)
    thresholds = RefinementThresholds(cfg.refine_budgets)
    rows = []
    for ratio in cfg.sparsity_ratios:
        S = cfg.sparsity(ratio)
        assets = _prepare(cfg, X, S, cfg.K, cfg.db_noise_fraction)
        S_nq = noise_count(cfg.query_noise_fraction, cfg.L, S)
        bundle, W1 = assets.public, assets.private.layers[0].transform
        stages = ["public"] + [f"private-{k}" for k in range(1, cfg.K + 1)]
        hits = {(snr, st): 0 for snr in cfg.snr_db for st in stages}
        for t in range(cfg.trials):
            m, z, qseed = _trial(cfg, cfg.M, t)
            for snr in cfg.snr_db:
                y = X[:, m] + math.sqrt(noise_variance(snr)) * z
                b_p, _ = client_query(y, W1, S, S_nq, bundle.selection, np.random.default_rng(qseed))
                public = public_search(bundle, b_p, rule)
                hits[snr, "public"] += m in public
                lists = private_refine(assets.private, PrivateQuery(y, cfg.K, public.indices), thresholds)
                for k in range(1, cfg.K + 1):
                    hits[snr, f"private-{k}"] += final_decision(lists[:k]) == m
        rate = code_rate(cfg.L, S)
        for snr in cfg.snr_db:
            for st in stages:
                h = hits[snr, st]
                lo, hi = wilson_interval(h, cfg.trials)
                k = 1 if st == "public" else int(st.split("-")[1])
                rows.append({
                    "stage": st, "snr_db": snr, "sparsity_ratio": S / cfg.L, "sparsity": S,
                    "rate": rate, "total_rate": k * rate * cfg.L / cfg.N,
                    "p_id": h / cfg.trials, "hits": h, "trials": cfg.trials,
                    "ci_low": lo, "ci_high": hi,
                })
    return rows


def run_similarity_curves(cfg: ExperimentConfig) -> list:
    """Mean normalized similarity of matched (item, noisy query) pairs per sparsity and SNR.

    Two series: ``clean`` codes, and ``ambiguized`` public code against the
    ambiguized public query.
    """
    X = gen_database(cfg.M, cfg.N, cfg.seed)
    rows = []
    for ratio in cfg.sparsity_ratios:
        S = cfg.sparsity(ratio)
        assets = _prepare(cfg, X, S, 1, cfg.db_noise_fraction)
        layer, bundle = assets.private.layers[0], assets.public
        S_nq = noise_count(cfg.query_noise_fraction, cfg.L, S)
        sums = {(snr, s): 0.0 for snr in cfg.snr_db for s in ("clean", "ambiguized")}
        for t in range(cfg.trials):
            m, z, qseed = _trial(cfg, cfg.M, t)
            for snr in cfg.snr_db:
                y = X[:, m] + math.sqrt(noise_variance(snr)) * z
                b, _ = client_query(y, layer.transform, S, 0, np.arange(cfg.L), None)
                sums[snr, "clean"] += score(layer.codes[m], b).nu
                b_p, _ = client_query(y, layer.transform, S, S_nq, bundle.selection, np.random.default_rng(qseed))
                sums[snr, "ambiguized"] += score(bundle.codes[m], b_p).nu
        for snr in cfg.snr_db:
            for series in ("clean", "ambiguized"):
                rows.append({
                    "series": series, "snr_db": snr, "sparsity_ratio": S / cfg.L, "sparsity": S,
                    "rate": code_rate(cfg.L, S), "nu_mean": sums[snr, series] / cfg.trials,
                    "trials": cfg.trials,
                })
    return rows


def public_reconstruction(bundle, X, gain=None) -> np.ndarray:
    """Linear reconstruction of ``X`` from the public codes alone.

    With ``gain=None`` the least-squares gain against ``X`` is used, i.e. the
    most favourable scale an attacker could pick.
    """
    W_sel = bundle.transform.matrix[bundle.selection]
    unscaled = W_sel.T @ bundle.codes.T.astype(np.float64)
    if gain is None:
        gain = fit_gain(X, unscaled)
    return gain * unscaled


def _mse(X, Xhat) -> float:
    return float(np.sum((X - Xhat) ** 2) / X.size)


def run_dr_experiment(cfg: ExperimentConfig) -> list:
    """Distortion vs rate (bits per source dimension) for private levels and public ambiguization levels.

    The codec (transforms and gains) is trained on one draw of ``dr_M`` items
    and distortion is measured on a second, independent draw; a transform
    fitted to the measured sample itself would under-report distortion.
    """
    X = gen_database(cfg.dr_M, cfg.N, cfg.seed)
    X_test = gen_database(cfg.dr_M, cfg.N, [cfg.seed, 1])
    rows = []
    for S in cfg.dr_sparsities:
        cb = build_layers(X, _layer_specs(cfg, S, cfg.K))
        norms = residual_norms(cb, X_test)
        per_layer = code_rate(cfg.L, S) * cfg.L / cfg.N
        for k in range(1, cfg.K + 1):
            rate = k * per_layer
            rows.append({
                "series": f"private-{k}", "sparsity": S, "noise": 0, "rate": rate,
                "distortion": norms[k - 1] ** 2 / X_test.size,
                "train_distortion": cb.residual_history[k - 1] ** 2 / X.size,
                "shannon": shannon_dr(rate),
            })
        first = cb.layers[0]
        test_codes = encode_batch(X_test, first.transform, S)
        for frac in cfg.dr_noise_fractions:
            amb = AmbiguizationConfig(
                noise=noise_count(frac, cfg.L, S), public_length=cfg.public_length,
                permutation_seed=cfg.seed + 2, rng_seed=cfg.seed + 3,
            )
            train_bundle = ambiguize_codebook(first.codes, amb, first.transform, S)
            gain = fit_gain(X, public_reconstruction(train_bundle, X, 1.0))
            bundle = ambiguize_codebook(test_codes, amb, first.transform, S)
            rate = bundle.L_p * bundle.rate / cfg.N
            rows.append({
                "series": f"public-{frac:g}", "sparsity": S, "noise": amb.noise, "rate": rate,
                "distortion": _mse(X_test, public_reconstruction(bundle, X_test, gain)),
                "train_distortion": _mse(X, public_reconstruction(train_bundle, X, gain)),
                "shannon": shannon_dr(rate),
            })
    return rows


def run_leakage_ordering(cfg: ExperimentConfig) -> list:
    """Per batch: public, level-1 and level-K reconstruction MSE and whether they are ordered."""
    rows = []
    S = cfg.leak_sparsity
    for batch in range(cfg.leak_batches):
        X = gen_database(cfg.leak_M, cfg.N, [cfg.seed, 1000 + batch])
        assets = _prepare(cfg, X, S, cfg.K, cfg.db_noise_fraction)
        every = np.arange(X.shape[1])
        mse_pub = _mse(X, public_reconstruction(assets.public, X))
        mse_1 = _mse(X, reconstruct(assets.private, every, 1))
        mse_k = _mse(X, reconstruct(assets.private, every, cfg.K))
        rows.append({
            "batch": batch, "sparsity": S, "noise": assets.public.nominal_support - S,
            "mse_public": mse_pub, "mse_level_1": mse_1, f"mse_level_{cfg.K}": mse_k,
            "ordered": int(mse_pub >= mse_1 >= mse_k),
        })
    return rows


# -- trend checks -----------------------------------------------------------

def check_pid_trends(rows, snrs) -> list:
    """Failures of: P_id non-decreasing in SNR, and private level 1 not below public."""
    by = {(r["stage"], r["snr_db"], r["sparsity"]): r for r in rows}
    failures = []
    snrs = sorted(snrs)
    for stage, snr, S in by:
        r = by[stage, snr, S]
        i = snrs.index(snr)
        if i + 1 < len(snrs):
            up = by[stage, snrs[i + 1], S]
            if not not_below(up["p_id"], up["trials"], r["p_id"], r["trials"]):
                failures.append(f"{stage} S={S}: P_id drops from {r['p_id']:.3f} at {snr} dB "
                                f"to {up['p_id']:.3f} at {snrs[i + 1]} dB")
        if stage == "public":
            priv = by["private-1", snr, S]
            if not not_below(priv["p_id"], priv["trials"], r["p_id"], r["trials"]):
                failures.append(f"S={S} {snr} dB: private-1 P_id {priv['p_id']:.3f} "
                                f"below public {r['p_id']:.3f}")
    return failures


def check_similarity_trends(rows, snr=10.0) -> list:
    failures = [f"nu out of [0,1]: {r}" for r in rows if not 0 <= r["nu_mean"] <= 1]
    clean = [r for r in rows if r["series"] == "clean" and r["snr_db"] == snr]
    if clean:
        best = max(clean, key=lambda r: r["nu_mean"])
        if not best["sparsity_ratio"] < 0.5:
            failures.append(f"clean nu peaks at sparsity ratio {best['sparsity_ratio']} >= 0.5")
    return failures


def check_dr_trends(rows, low_rate=0.3, factor=4.0) -> list:
    failures = []
    for r in rows:
        if r["distortion"] < r["shannon"]:
            failures.append(f"{r['series']} S={r['sparsity']}: D={r['distortion']:.4f} below bound {r['shannon']:.4f}")
        if r["rate"] <= low_rate and r["distortion"] > factor * r["shannon"]:
            failures.append(f"{r['series']} S={r['sparsity']}: D={r['distortion']:.4f} more than "
                            f"{factor}x the bound at rate {r['rate']:.3f}")
    return failures


def check_leakage(rows) -> list:
    return [f"batch {r['batch']} out of order: {r}" for r in rows if not r["ordered"]]


# -- output -----------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if not rows:
            return path
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(rows[0]))
        for r in rows:
            writer.writerow([_fmt(v) for v in r.values()])
    return path


_PLOTS = {
    "pid": ("sparsity_ratio", "p_id", ["stage", "snr_db"], False),
    "sim": ("sparsity_ratio", "nu_mean", ["series", "snr_db"], False),
    "dr": ("rate", "distortion", ["series", "sparsity"], True),
    "leakage": ("batch", "mse_public", [], False),
}


def write_plot_script(kind: str, csv_name: str, path) -> Path:
    """Emit a standalone matplotlib script that plots ``csv_name``."""
    x, y, groups, logy = _PLOTS[kind]
    script = f'''"""Plot {csv_name}. Requires pandas and matplotlib."""
import pandas as pd
import matplotlib.pyplot as plt

df = pd.read_csv("{csv_name}")
fig, ax = plt.subplots()
groups = {groups!r}
for key, part in (df.groupby(groups) if groups else [("all", df)]):
    part = part.sort_values("{x}")
    ax.plot(part["{x}"], part["{y}"], marker="o", label=str(key))
'''
    if kind == "dr":
        script += '''rates = sorted(df["rate"])
ax.plot(rates, [2.0 ** (-2 * r) for r in rates], "k--", label="Gaussian D(R)")
'''
    script += f'''ax.set_xlabel("{x}")
ax.set_ylabel("{y}")
{"ax.set_yscale('log')" if logy else ""}
ax.legend(fontsize="small")
fig.savefig("{Path(csv_name).stem}.png", dpi=150)
'''
    path = Path(path)
    path.write_text(script)
    return path


RUNNERS = {
    "pid": (run_pid_experiment, lambda rows, cfg: check_pid_trends(rows, cfg.snr_db)),
    "sim": (run_similarity_curves, lambda rows, cfg: check_similarity_trends(rows)),
    "dr": (run_dr_experiment, lambda rows, cfg: check_dr_trends(rows)),
    "leakage": (run_leakage_ordering, lambda rows, cfg: check_leakage(rows)),
}


def run(kind: str, cfg: ExperimentConfig, out_dir):
    """Run one experiment, write ``<kind>.csv`` and ``plot_<kind>.py``; return ``(rows, failures)``."""
    runner, checker = RUNNERS[kind]
    rows = runner(cfg)
    out = Path(out_dir)
    write_csv(rows, out / f"{kind}.csv")
    write_plot_script(kind, f"{kind}.csv", out / f"plot_{kind}.py")
    return rows, checker(rows, cfg)


def config_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)
