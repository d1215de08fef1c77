"""Experiment orchestration: config parsing, deterministic ensembles, manifests, reports.

Trajectories run in fixed blocks whose RNG streams depend only on
(master seed, trajectory index), so the aggregated outputs are the same for
any number of worker processes.
"""
import copy
import hashlib
import json
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .burgers import SimConfig, Trajectory, simulate, snapshots_csv
from .lattice import TestFunction, build_lattice
from . import observables as obs

KINDS = ("simulate", "diffusivity", "variance", "hierarchy", "mct", "check")

DEFAULTS = {
    "kind": "simulate",
    "n_trajectories": 100,
    "seed": 0,
    "jobs": 1,
    "out": "results",
    "block_size": 25,
    "sim": {"cutoff_n": 2, "lam": 1.0, "dt": 0.01, "t_final": 10.0, "record_stride": 1, "backend": ""},
    "diffusivity": {"t_grid": [0.5, 1.0, 2.0], "mu": [0.5, 1.0]},
    "variance": {"eps": 1.0, "t_grid": [1.0, 10.0, 100.0]},
    "hierarchy": {"cutoff_n": 2, "lam": 1.0, "mu": [1.0], "n_list": [2, 3, 4, 5]},
    "mct": {"lam": 1.0, "c0": 1.0, "kernel_norm": (2 * np.pi) ** 2, "kernel": "full",
            "closure": "exponential", "q_min": 1e-6, "n_q": 300, "t_final": 1e6, "dt0": 1e-3,
            "n_ramp": 100, "growth": 1.005, "window": [1e2, 1e6], "csv_every": 10},
    "check": {"criteria": [], "quick": False},
}

# keys that do not influence primary outputs and stay out of the hash
_UNHASHED = ("jobs", "out")


class ConfigError(ValueError):
    pass


class RunFailed(RuntimeError):
    pass


class NoResults(FileNotFoundError):
    pass


def _merge(defaults, given, where=""):
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        path = f"{where}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            out[key] = _merge(defaults[key], val, path + ".")
        else:
            out[key] = val
    return out


def _canonical(d):
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; ``data`` is the full JSON echo with defaults."""

    data_json: str

    @property
    def data(self):
        return json.loads(self.data_json)

    def __getattr__(self, name):
        d = json.loads(object.__getattribute__(self, "data_json"))
        if name in d:
            return d[name]
        raise AttributeError(name)

    @property
    def config_hash(self):
        d = {k: v for k, v in self.data.items() if k not in _UNHASHED}
        return hashlib.sha256(_canonical(d).encode()).hexdigest()

    def __hash__(self):
        return int(self.config_hash[:16], 16)

    def sim_config(self, **over):
        s = {**self.data["sim"], **over}
        return SimConfig(seed=self.seed, **s)

    def replace(self, **over):
        return make_config({**self.data, **over})


def make_config(given: dict) -> RunConfig:
    d = _merge(DEFAULTS, given)
    if d["kind"] not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {d['kind']!r}")
    seed = d["seed"]
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if int(d["jobs"]) < 1 or int(d["block_size"]) < 1 or int(d["n_trajectories"]) < 1:
        raise ConfigError("jobs, block_size and n_trajectories must be positive")
    try:
        SimConfig(seed=seed, **d["sim"])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"sim: {e}") from None
    return RunConfig(_canonical(d))


def parse_config(path=None, **overrides) -> RunConfig:
    """Load a JSON config (or a manifest, to replay it) and apply CLI overrides."""
    given = {}
    if path is not None:
        with open(path) as fh:
            given = json.load(fh)
        if "manifest_version" in given:
            given = given["config"]
    given = {**given, **{k: v for k, v in overrides.items() if v is not None}}
    return make_config(given)


def schema_doc() -> str:
    """The defaults, which double as the schema."""
    return json.dumps(DEFAULTS, indent=2, sort_keys=True)


# ------------------------------------------------------------------ io

def atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _sha(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def _write_rows(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(v if isinstance(v, str) else repr(v) for v in r) for r in rows]
    atomic_write(path, "\n".join(lines) + "\n")


def trajectory_seed(master, index):
    """64-bit identifier of the stream used by trajectory ``index``."""
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


# ------------------------------------------------------------------ ensembles

def _run_block(args):
    sim, phis, n, first, record_fields = args
    t0 = time.perf_counter()
    tr = simulate(sim, phis, n_traj=n, first_index=first, record_fields=record_fields)
    return tr, time.perf_counter() - t0


def run_blocks(sim: SimConfig, phis, n_traj, block_size=25, jobs=1, record_fields=False):
    """Simulate ``n_traj`` trajectories in fixed blocks; returns (Trajectory, block timings)."""
    starts = list(range(0, n_traj, block_size))
    tasks = [(sim, tuple(phis), min(block_size, n_traj - s), s, record_fields) for s in starts]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            res = list(ex.map(_run_block, tasks))
    else:
        res = [_run_block(t) for t in tasks]
    return Trajectory.concat([r[0] for r in res]), [r[1] for r in res]


def _n_batches(n):
    return min(30, n)


def bump_hat(p):
    """Continuum transform of a smooth radial bump: (1 - |p|^2)^2 on |p| < 1."""
    r2 = np.sum(np.asarray(p, dtype=float) ** 2, axis=-1)
    return np.where(r2 < 1, (1 - r2) ** 2, 0.0)


def _ensemble(cfg: RunConfig, out, tol, record_fields=False, phis=None):
    sim = cfg.sim_config()
    lat = build_lattice(sim.cutoff_n)
    phis = phis or [TestFunction.e0(lat)]
    try:
        tr, times = run_blocks(sim, phis, cfg.n_trajectories, cfg.block_size, cfg.jobs, record_fields)
    except FloatingPointError as e:
        raise RunFailed(str(e)) from None
    return sim, tr, times


def _simulate(cfg, out, tol):
    n = cfg.sim["cutoff_n"]
    sim, tr, timings = _ensemble(cfg, out, tol, record_fields=n <= 8)
    nb = _n_batches(tr.n_traj)
    rows = []
    if tr.fields is not None:
        mean, se = obs.batch_means(np.abs(tr.fields[:, -1]) ** 2, nb)
        lat = build_lattice(n)
        z = np.abs(mean - 1) / se
        rows = [(int(k[0]), int(k[1]), float(m), float(s)) for k, m, s in zip(lat.modes, mean, se)]
        _write_rows(os.path.join(out, "modes.csv"), ["k1", "k2", "mean_abs2", "stderr"], rows)
        tol["stationarity_max_z"] = {"value": float(z.max()), "limit": 5.0, "passed": bool(z.max() < 5)}
        keep = np.unique(np.linspace(0, len(tr.times) - 1, min(50, len(tr.times))).astype(int))
        snapshots_csv(os.path.join(out, "snapshots.csv"), sim, tr.times[keep], tr.fields[0, keep])
    keep = np.unique(np.linspace(0, len(tr.times) - 1, min(200, len(tr.times))).astype(int))
    b = tr.b_series("e0")[:, keep]
    mean, se = obs.batch_means(b ** 2, nb)
    _write_rows(os.path.join(out, "B2_e0.csv"), ["t", "mean", "stderr"],
                zip(tr.times[keep].tolist(), mean.tolist(), se.tolist()))
    return tr, timings


def _diffusivity(cfg, out, tol):
    sim, tr, timings = _ensemble(cfg, out, tol)
    nb = _n_batches(tr.n_traj)
    tg = cfg.diffusivity["t_grid"]
    gk = obs.green_kubo_D(tr, tg, n_batches=nb)
    di = obs.direct_green_kubo(tr, tg, n_batches=nb)
    z = np.abs(gk.mean - di.mean) / np.hypot(gk.stderr, di.stderr)
    _write_rows(os.path.join(out, "D.csv"), ["t", "D_bvar", "stderr_bvar", "D_direct", "stderr_direct"],
                zip(gk.abscissae.tolist(), gk.mean.tolist(), gk.stderr.tolist(),
                    di.mean.tolist(), di.stderr.tolist()))
    tol["green_kubo_max_z"] = {"value": float(z.max()), "limit": 3.0, "passed": bool(z.max() < 3)}
    rows = []
    for mu in cfg.diffusivity["mu"]:
        a = obs.laplace_D(tr, mu, "direct", n_batches=nb)
        b = obs.laplace_D(tr, mu, "bsq", n_batches=nb)
        rows.append((float(mu), a.value, a.error, b.value, b.error))
    _write_rows(os.path.join(out, "laplace_D.csv"),
                ["mu", "D_direct", "err_direct", "inv_mu_plus_N2B", "err_bvar"], rows)
    return tr, timings


def _variance(cfg, out, tol):
    n = cfg.sim["cutoff_n"]
    eps = cfg.variance["eps"]
    phi = obs.scaled_test_function(bump_hat, eps, n, id="bump")
    sim, tr, timings = _ensemble(cfg, out, tol, phis=[phi])
    v = obs.variance_increment_V(tr, "bump", eps, cfg.variance["t_grid"], n_batches=_n_batches(tr.n_traj))
    ratio = v.mean / np.maximum(np.log(v.abscissae), 1.0)
    _write_rows(os.path.join(out, "V.csv"), ["t", "V", "stderr", "V_over_log"],
                zip(v.abscissae.tolist(), v.mean.tolist(), v.stderr.tolist(), ratio.tolist()))
    return tr, timings


def _hierarchy(cfg, out, tol):
    from .chaos import chaos_basis, n_phi_vector, sandwich, theorem_bound_probe
    h = cfg.hierarchy
    lat = build_lattice(h["cutoff_n"])
    nv = n_phi_vector(TestFunction.e0(lat), h["lam"], chaos_basis(h["cutoff_n"], 2))
    rows = []
    t0 = time.perf_counter()
    for mu in h["mu"]:
        lo, hi, vals = sandwich(mu, h["n_list"], nv, h["lam"])
        for n_, v in vals.items():
            rows.append((float(mu), int(n_), float(v), "lower" if n_ % 2 else "upper"))
        tol[f"sandwich_width_mu={mu}"] = {"value": float(hi - lo), "limit": None, "passed": bool(hi >= lo)}
    _write_rows(os.path.join(out, "bounds.csv"), ["mu", "n", "value", "side"], rows)
    for mu in h["mu"]:
        for k in (0, 1):
            p = theorem_bound_probe(mu, k, h["cutoff_n"], h["lam"], n_test_vectors=50)
            tol[f"bound_probe_mu={mu}_k={k}"] = {"value": {s: p[s] for s in ("upper", "lower")},
                                                 "limit": None, "passed": True}
    return None, [time.perf_counter() - t0]


def _mct(cfg, out, tol):
    from . import mct
    m = dict(cfg.mct)
    t0 = time.perf_counter()
    grid = mct.MctGrid.build(q_min=m["q_min"], n_q=m["n_q"], t_final=m["t_final"], dt0=m["dt0"],
                             n_ramp=m["n_ramp"], growth=m["growth"])
    params = mct.MctParams(lam=m["lam"], c0=m["c0"], kernel_norm=m["kernel_norm"],
                           kernel=m["kernel"], closure=m["closure"])
    try:
        g = mct.evolve_S(grid, params=params)
    except FloatingPointError as e:
        raise RunFailed(str(e)) from None
    g.to_csv(os.path.join(out, "S.csv"), every=int(m["csv_every"]))
    rep = mct.fit_report(g, tuple(m["window"]))
    atomic_write(os.path.join(out, "fit.json"), json.dumps(rep, indent=2, sort_keys=True) + "\n")
    tol["delta_in_band"] = {"value": rep["delta"], "limit": [0.4, 0.6],
                            "passed": bool(0.4 <= rep["delta"] <= 0.6)}
    return None, [time.perf_counter() - t0]


def _check(cfg, out, tol):
    from .acceptance import run_all
    t0 = time.perf_counter()
    results = run_all(cfg.check["criteria"] or None, quick=cfg.check["quick"], seed=cfg.seed,
                      jobs=cfg.jobs, out=out)
    for r in results:
        tol[f"criterion_{r.id}"] = {"value": r.detail, "limit": r.tolerance, "passed": r.passed}
    return None, [time.perf_counter() - t0]


_RUNNERS = {"simulate": _simulate, "diffusivity": _diffusivity, "variance": _variance,
            "hierarchy": _hierarchy, "mct": _mct, "check": _check}

# files whose bytes must be reproducible; the manifest itself carries timings
PRIMARY = ("modes.csv", "snapshots.csv", "B2_e0.csv", "D.csv", "laplace_D.csv", "V.csv",
           "bounds.csv", "S.csv", "fit.json", "acceptance.json")


def calibration_constants():
    return {"fock_norm_weight": "n! * multiplicity", "wick_calibration": 1.0,
            "kernel_prefactor": 1 / (2 * np.pi), "fft_grid_min": "4N",
            "stability_rule": "dt <= 0.5/N^2"}


def run(cfg: RunConfig, out=None) -> dict:
    """Execute the configured experiment, write outputs and the manifest; return the manifest."""
    out = out or cfg.out
    os.makedirs(out, exist_ok=True)
    tol = {}
    manifest = {"manifest_version": 1, "config": cfg.data, "config_hash": cfg.config_hash,
                "code_version": __version__, "calibration": calibration_constants()}
    if cfg.kind in ("simulate", "diffusivity", "variance"):
        manifest["seeds"] = [[i, trajectory_seed(cfg.seed, i)] for i in range(cfg.n_trajectories)]
    t0 = time.perf_counter()
    try:
        _, timings = _RUNNERS[cfg.kind](cfg, out, tol)
    except RunFailed as e:
        manifest.update(status="failed", error=str(e), timings={"total_s": time.perf_counter() - t0})
        atomic_write(os.path.join(out, "manifest.json"), json.dumps(manifest, indent=2) + "\n")
        raise
    outputs = {f: _sha(os.path.join(out, f)) for f in PRIMARY if os.path.exists(os.path.join(out, f))}
    manifest.update(status="ok", outputs=outputs, tolerances=tol,
                    timings={"total_s": time.perf_counter() - t0, "blocks_s": timings})
    atomic_write(os.path.join(out, "manifest.json"), json.dumps(manifest, indent=2) + "\n")
    return manifest


def report(results_dir) -> tuple[str, int]:
    """Dashboard text and exit code (0 iff everything present is green)."""
    if not os.path.isdir(results_dir) or not os.listdir(results_dir):
        raise NoResults(f"no results in {results_dir!r}")
    lines, failed, missing = [], [], []
    acc = os.path.join(results_dir, "acceptance.json")
    man = os.path.join(results_dir, "manifest.json")
    if not os.path.exists(acc) and not os.path.exists(man):
        raise NoResults(f"no results in {results_dir!r} (neither acceptance.json nor manifest.json)")
    if os.path.exists(acc):
        with open(acc) as fh:
            for r in json.load(fh)["criteria"]:
                tag = "PASS" if r["passed"] else "FAIL"
                lines.append(f"[{tag}] {r['id']:>2} {r['name']}: {r['detail']} (tolerance: {r['tolerance']})")
                if not r["passed"]:
                    failed.append(f"criterion {r['id']} ({r['name']})")
    if os.path.exists(man):
        with open(man) as fh:
            m = json.load(fh)
        lines.append(f"run {m['config']['kind']} hash={m['config_hash'][:12]} status={m.get('status')}")
        if m.get("status") != "ok":
            failed.append(f"run status {m.get('status')}: {m.get('error', '')}")
        for f in m.get("outputs", {}):
            if not os.path.exists(os.path.join(results_dir, f)):
                missing.append(f)
        if not os.path.exists(acc):
            for name, t in m.get("tolerances", {}).items():
                tag = "PASS" if t["passed"] else "FAIL"
                lines.append(f"[{tag}] {name}: {t['value']} (limit {t['limit']})")
                if not t["passed"]:
                    failed.append(name)
    if missing:
        lines.append("missing inputs: " + ", ".join(missing))
    lines.append("all green" if not (failed or missing) else "FAILED: " + "; ".join(failed + missing))
    return "\n".join(lines), 0 if not (failed or missing) else 1
