"""``sparseid`` command line: asset preparation, servers, queries and experiments.

Every command reads one JSON config. Relative paths in it resolve against
the config file's directory. See ``configs/desk.json`` in the source tree
for all keys.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import bench
from .errors import SparseIdError
from .pipeline import OwnerAssets, RefinementThresholds, SearchRule, owner_prepare
from .privacy import AmbiguizationConfig, noise_count
from .protocol import ClientConfig, InProcessTransport, PrivateService, PublicService, identify
from .layered import LayerSpec
from .stc import LearningConfig

log = logging.getLogger("sparseid")

DEFAULTS = {
    "seed": 0,
    "data": {"M": 2000, "N": 128, "path": None},
    "layers": {"K": 3, "sparsity": 16, "max_iterations": 20, "convergence_tol": 1e-6, "fit_gain": True},
    "ambiguization": {"noise_fraction": 0.5, "public_length": None},
    "query": {"noise_fraction": 0.25, "snr_db": 10.0, "auth": 1, "item": 0, "path": None},
    "search": {"rule": "top_gamma", "gamma": 10, "sim_min": 0, "dis_max": 0},
    "refine": {"budgets": None, "squared": True, "top_counts": None, "allowed_levels": None},
    "endpoints": {"public": "127.0.0.1:7301", "private": "127.0.0.1:7302"},
    "assets": "assets",
    "bench": {},
}


class Config:
    """Config file merged over :data:`DEFAULTS` one section deep."""

    def __init__(self, raw: dict, base_dir: Path):
        unknown = set(raw) - set(DEFAULTS)
        if unknown:
            raise SparseIdError(f"unknown config sections: {sorted(unknown)}")
        self.base_dir = base_dir
        self.data = {}
        for key, default in DEFAULTS.items():
            value = raw.get(key, default)
            if isinstance(default, dict) and key != "bench":
                extra = set(value) - set(default)
                if extra:
                    raise SparseIdError(f"unknown keys in {key!r}: {sorted(extra)}")
                value = {**default, **value}
            self.data[key] = value

    @classmethod
    def load(cls, path, seed=None) -> "Config":
        path = Path(path)
        cfg = cls(json.loads(path.read_text()), path.resolve().parent)
        if seed is not None:
            cfg.data["seed"] = seed
        return cfg

    def __getitem__(self, key):
        return self.data[key]

    def path(self, value) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def assets(self) -> Path:
        return self.path(self.data["assets"])

    def database(self) -> np.ndarray:
        d = self["data"]
        if d["path"] is not None:
            X = np.load(self.path(d["path"]))
            if X.ndim != 2:
                raise SparseIdError("data file must hold an (N, M) matrix")
            return X.astype(np.float64)
        return bench.gen_database(int(d["M"]), int(d["N"]), self.seed)

    def sparsities(self) -> list:
        lay = self["layers"]
        s = lay["sparsity"]
        return list(s) if isinstance(s, list) else [s] * int(lay["K"])

    def layer_specs(self) -> list:
        lay = self["layers"]
        learning = LearningConfig(
            max_iterations=int(lay["max_iterations"]),
            convergence_tol=float(lay["convergence_tol"]),
            seed=self.seed + 1,
        )
        return [LayerSpec(int(s), learning, fit_gain=bool(lay["fit_gain"])) for s in self.sparsities()]

    def ambiguization(self, L: int) -> AmbiguizationConfig:
        a = self["ambiguization"]
        return AmbiguizationConfig(
            noise=noise_count(float(a["noise_fraction"]), L, self.sparsities()[0]),
            public_length=a["public_length"],
            permutation_seed=self.seed + 2,
            rng_seed=self.seed + 3,
        )

    def rule(self) -> SearchRule:
        s = self["search"]
        return SearchRule(s["rule"], int(s["gamma"]), int(s["sim_min"]), int(s["dis_max"]))

    def thresholds(self) -> RefinementThresholds:
        r = self["refine"]
        tuple_or_none = lambda v: None if v is None else tuple(v)  # noqa: E731
        return RefinementThresholds(tuple_or_none(r["budgets"]), bool(r["squared"]), tuple_or_none(r["top_counts"]))

    def allowed_levels(self):
        levels = self["refine"]["allowed_levels"]
        return None if levels is None else set(levels)

    def experiment(self) -> bench.ExperimentConfig:
        return bench.ExperimentConfig.from_dict({"seed": self.seed, **self["bench"]})


def _query_vector(cfg: Config, N: int):
    """The configured query: a file, or a stored item plus Gaussian noise at ``snr_db``."""
    q = cfg["query"]
    rng = np.random.default_rng([cfg.seed, 4])
    if q["path"] is not None:
        return np.load(cfg.path(q["path"])).astype(np.float64).reshape(N), None, rng
    item = int(q["item"])
    x = cfg.database()[:, item]
    y = bench.gen_query(x, float(q["snr_db"]), rng)
    return y, item, rng


def _client(cfg: Config, assets: OwnerAssets) -> ClientConfig:
    q = cfg["query"]
    S = assets.private.layers[0].sparsity
    noise = noise_count(float(q["noise_fraction"]), assets.public.L, S)
    return ClientConfig.from_bundle(assets.public, S, noise, cfg.rule(), int(q["auth"]))


def _report(result, item) -> dict:
    def listing(cl):
        return [{"index": int(i), "score": float(s)} for i, s in zip(cl.indices, cl.scores)]

    return {
        "item": item,
        "public": listing(result.public_list),
        "private": [listing(cl) for cl in result.private_lists],
        "decision": result.decision,
    }


# -- commands ---------------------------------------------------------------

def cmd_prepare(cfg: Config, args) -> int:
    X = cfg.database()
    assets = owner_prepare(X, cfg.layer_specs(), cfg.ambiguization(X.shape[0]))
    assets.config["seed"] = cfg.seed
    files = assets.save(cfg.assets)
    print(json.dumps({
        "assets": str(cfg.assets), "M": assets.private.M, "N": assets.private.N,
        "L": assets.private.L, "L_p": assets.public.L_p, "K": assets.private.K,
        "files": [str(Path(f).relative_to(cfg.assets)) for f in files],
    }, indent=2))
    return 0


def cmd_serve_public(cfg: Config, args) -> int:
    from .net import serve_public

    serve_public(OwnerAssets.load(cfg.assets).public, cfg["endpoints"]["public"])
    return 0


def cmd_serve_private(cfg: Config, args) -> int:
    from .net import serve_private

    serve_private(OwnerAssets.load(cfg.assets).private, cfg["endpoints"]["private"],
                  cfg.thresholds(), cfg.allowed_levels())
    return 0


def cmd_query(cfg: Config, args) -> int:
    """Full identification in one process, no sockets."""
    assets = OwnerAssets.load(cfg.assets)
    y, item, rng = _query_vector(cfg, assets.private.N)
    public = InProcessTransport(PublicService(assets.public))
    private = InProcessTransport(PrivateService(assets.private, cfg.thresholds(), cfg.allowed_levels()))
    result = identify(y, _client(cfg, assets), public, private, rng)
    print(json.dumps(_report(result, item), indent=2))
    return 0


def cmd_identify(cfg: Config, args) -> int:
    """Full identification against running servers."""
    from .net import remote_identify

    assets = OwnerAssets.load(cfg.assets)
    y, item, rng = _query_vector(cfg, assets.private.N)
    ep = cfg["endpoints"]
    result = remote_identify(_client(cfg, assets), (ep["public"], ep["private"]), y, rng)
    print(json.dumps(_report(result, item), indent=2))
    return 0


def cmd_bench(cfg: Config, args) -> int:
    exp = cfg.experiment()
    out = Path(args.out)
    rows, failures = bench.run(args.kind, exp, out)
    (out / f"{args.kind}_config.json").write_text(
        json.dumps(bench.config_dict(exp), indent=2, sort_keys=True, default=_json_default) + "\n"
    )
    print(f"{args.kind}: {len(rows)} rows -> {out / (args.kind + '.csv')}")
    for f in failures:
        print(f"TREND FAILED: {f}", file=sys.stderr)
    if failures and args.assert_trends:
        return 1
    return 0


def _json_default(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    raise TypeError(f"not JSON serializable: {v!r}")


COMMANDS = {
    "prepare": cmd_prepare,
    "serve-public": cmd_serve_public,
    "serve-private": cmd_serve_private,
    "query": cmd_query,
    "identify": cmd_identify,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparseid", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        return p

    common(sub.add_parser("prepare", help="build private codebooks and the public bundle"))
    common(sub.add_parser("serve-public", help="serve public search over TCP"))
    common(sub.add_parser("serve-private", help="serve private refinement over TCP"))
    common(sub.add_parser("query", help="identify the configured query in-process"))
    common(sub.add_parser("identify", help="identify the configured query against running servers"))
    b = common(sub.add_parser("bench", help="run a synthetic experiment"))
    b.add_argument("kind", choices=sorted(bench.RUNNERS))
    b.add_argument("--out", required=True, help="output directory for CSV and plot script")
    b.add_argument("--assert", dest="assert_trends", action="store_true",
                   help="exit 1 when a trend check fails")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = Config.load(args.config, args.seed)
        return COMMANDS[args.command](cfg, args)
    except (SparseIdError, OSError, ValueError) as exc:
        print(f"sparseid: error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
