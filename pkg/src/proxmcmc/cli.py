"""Command-line experiment driver.

    proxmcmc simulate --config exp.toml --out runs/cam
    proxmcmc sapg     --config exp.toml --out runs/cam
    proxmcmc sample   --config exp.toml --out runs/cam --sampler ls-skrock --s 15
    proxmcmc diagnose --manifest runs/cam/sample_ls-skrock.json
    proxmcmc compare  runs/cam/sample_myula.json runs/cam/sample_ls-skrock.json --out runs/cam

Configs are flat TOML; a JSON manifest written by a previous run is also
accepted as ``--config`` and re-runs that experiment with the same settings.
"""
import argparse
import json
import platform
import sys
import time
from dataclasses import dataclass, asdict, fields
from pathlib import Path

import numpy as np

from . import __version__, diagnostics as dg, forward_models as fm, grid, sapg as sp, samplers as sm
from ._accel import get_backend

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# noise stream ids under the run seed
STREAM_OBS, STREAM_MASK, STREAM_CHAIN, STREAM_SAPG = 0, 1, 10, 20

LAMBDA_RULES = {"inv_Lf": 1.0, "5_inv_Lf": 5.0, "10_inv_Lf": 10.0}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "deblur"
    image: str = "cameraman"  # path to PGM/PNG, or the builtin "cameraman"
    image_size: int = 256  # builtin only: block-average the 512x512 original to this size
    crop: int = 0  # centre crop side; 0 keeps the full image
    blur_size: int = 5
    observed_fraction: float = 0.6
    snr_db: float = 40.0
    sampler: str = "myula"
    s: int = 15
    delta_frac: float = 1.0
    n_samples: int = 10000
    burn_in: int = 1000
    thinning: int = 1
    lambda_rule: str = "inv_Lf"
    theta: object = "sapg"
    rho2: object = "sapg"
    seed: int = 1
    out: str = "run"
    keep_samples: int = 0
    reference_eigvec: str = ""
    sapg_theta0: float = 0.04
    sapg_rho2_0: object = "sigma2"
    sapg_max_iter: int = 3000
    sapg_warmup: int = 1000
    sapg_beta: float = 1e-4
    sapg_domain: str = "log"
    sapg_rao_blackwell: bool = False

    def validate(self):
        if self.experiment not in ("deblur", "inpaint"):
            raise ConfigError(f"experiment must be 'deblur' or 'inpaint', got {self.experiment!r}")
        if self.sampler not in sm.SAMPLERS:
            raise ConfigError(f"sampler must be one of {sm.SAMPLERS}, got {self.sampler!r}")
        if self.lambda_rule not in LAMBDA_RULES:
            raise ConfigError(f"lambda_rule must be one of {sorted(LAMBDA_RULES)}")
        for name in ("n_samples", "thinning", "blur_size", "s", "image_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.burn_in < 0 or self.crop < 0 or self.keep_samples < 0:
            raise ConfigError("burn_in, crop and keep_samples must be non-negative")
        if not self.n_samples > self.burn_in:
            raise ConfigError("n_samples must exceed burn_in")
        if not 0 < self.delta_frac <= 1:
            raise ConfigError("delta_frac must lie in (0, 1]")
        if not 0 < self.observed_fraction <= 1:
            raise ConfigError("observed_fraction must lie in (0, 1]")
        for name in ("theta", "rho2"):
            v = getattr(self, name)
            if v != "sapg" and not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError(f"{name} must be a positive number or 'sapg'")

    @classmethod
    def from_mapping(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix == ".json":
            data = json.loads(path.read_text())
            data = data.get("config", data)
        else:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return ExperimentConfig.from_mapping(data)


def resolve_config(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    for key in ("seed", "out", "keep_samples", "sampler", "s", "delta_frac"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    cfg.validate()
    return cfg


# --- helpers ------------------------------------------------------------------

def _versions():
    import numba
    return {"proxmcmc": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "numba": numba.__version__, "backend": get_backend()}


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def _load_truth(cfg):
    if cfg.image == "cameraman":
        try:
            img = grid.cameraman(cfg.image_size)
        except ImportError as exc:
            raise ConfigError("the builtin cameraman needs scikit-image (pip install artifact[data])") from exc
    else:
        try:
            img = grid.read_image(cfg.image)
        except FileNotFoundError as exc:
            raise ConfigError(f"image not found: {cfg.image}") from exc
    if cfg.crop:
        img = grid.center_crop(img, cfg.crop, cfg.crop)
    return img


def _make_operator(cfg, shape, seed):
    rows, cols = shape
    try:
        if cfg.experiment == "deblur":
            return fm.make_uniform_blur(cfg.blur_size, rows, cols)
        return fm.make_inpainting(cfg.observed_fraction, rows, cols, grid.NoiseSource(seed, STREAM_MASK))
    except fm.ForwardModelError as exc:
        raise ConfigError(str(exc)) from exc


def _load_observation(out):
    path = Path(out) / "observation.npz"
    if not path.exists():
        raise ConfigError(f"no simulated observation at {path}; run 'simulate' first")
    data = np.load(path)
    truth = data["truth"]
    if "mask" in data.files:
        op = fm.Inpainting(data["mask"])
    else:
        op = fm.CirculantBlur(data["kernel"], *truth.shape)
    obs = fm.Observation(data["y"], float(data["sigma2"]), float(data["snr_db"]))
    return obs, op, truth


def _lam(cfg, obs, op):
    return LAMBDA_RULES[cfg.lambda_rule] / fm.lipschitz_f(obs, op)


def _resolve_params(cfg, obs, op):
    theta, rho2 = cfg.theta, cfg.rho2
    if "sapg" in (theta, rho2):
        mpath = Path(cfg.out) / "sapg_manifest.json"
        if not mpath.exists():
            raise ConfigError(f"theta/rho2 = 'sapg' but {mpath} does not exist; run 'sapg' first")
        res = json.loads(mpath.read_text())["results"]
        theta = res["theta_bar"] if theta == "sapg" else theta
        rho2 = res["rho2_bar"] if rho2 == "sapg" else rho2
    latent = cfg.sampler in ("sgs", "ls-myula", "ls-skrock")
    return sm.ModelParams(float(theta), _lam(cfg, obs, op), float(rho2) if latent else None)


# --- subcommands ------------------------------------------------------------------

def cmd_simulate(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    truth = _load_truth(cfg)
    op = _make_operator(cfg, truth.shape, cfg.seed)
    obs = fm.simulate_observation(truth, op, cfg.snr_db, grid.NoiseSource(cfg.seed, STREAM_OBS))
    arrays = {"y": obs.y, "truth": truth, "sigma2": obs.sigma2, "snr_db": obs.snr_db}
    if cfg.experiment == "inpaint":
        arrays["mask"] = op.mask
    else:
        arrays["kernel"] = op.kernel
    np.savez(out / "observation.npz", **arrays)
    files = ["observation.npz"]
    dg.write_image_with_sidecar(out / "y.png", obs.y)
    dg.write_image_with_sidecar(out / "truth.png", truth)
    files += ["y.png", "y.png.json", "truth.png", "truth.png.json"]
    if cfg.experiment == "inpaint":
        grid.write_image(out / "mask.png", op.mask.astype(float), 0.0, 1.0)
        files.append("mask.png")
    L_f = fm.lipschitz_f(obs, op)
    manifest = {
        "command": "simulate", "config": asdict(cfg), "versions": _versions(),
        "derived": {"sigma2": obs.sigma2, "L_f": L_f, "d": op.size, "n_observed": op.n_observed,
                    "operator": op.describe()},
        "outputs": files,
    }
    _write_json(out / "simulate_manifest.json", manifest)
    return manifest


def cmd_sapg(cfg):
    out = Path(cfg.out)
    obs, op, _ = _load_observation(out)
    rho2_0 = obs.sigma2 if cfg.sapg_rho2_0 == "sigma2" else float(cfg.sapg_rho2_0)
    scfg = sp.SapgConfig(theta0=cfg.sapg_theta0, rho2_0=rho2_0, max_iter=cfg.sapg_max_iter,
                         beta=cfg.sapg_beta, lam=_lam(cfg, obs, op), domain=cfg.sapg_domain,
                         warmup=cfg.sapg_warmup, rao_blackwell=cfg.sapg_rao_blackwell)
    t0 = time.perf_counter()
    trace = sp.sapg_run(scfg, obs, op, noise=grid.NoiseSource(cfg.seed, STREAM_SAPG))
    wall = time.perf_counter() - t0
    trace.write_csv(out / "sapg_trace.csv")
    resolved = trace.config
    manifest = {
        "command": "sapg", "config": asdict(cfg), "versions": _versions(),
        "derived": {"sigma2": obs.sigma2, "L_f": fm.lipschitz_f(obs, op), "lambda": resolved.lam,
                    "sapg": asdict(resolved)},
        "results": {"theta_bar": trace.theta_final, "rho2_bar": trace.rho2_final,
                    "stop_iter": trace.stop_iter, "converged": trace.converged},
        "timings": {"wall_s": wall},
        "outputs": ["sapg_trace.csv"],
    }
    _write_json(out / "sapg_manifest.json", manifest)
    return manifest


def cmd_sample(cfg):
    out = Path(cfg.out)
    obs, op, truth = _load_observation(out)
    params = _resolve_params(cfg, obs, op)
    noise = grid.NoiseSource(cfg.seed, STREAM_CHAIN)
    kernel = sm.make_kernel(cfg.sampler, obs, op, params, noise, s=cfg.s, delta_frac=cfg.delta_frac)
    lip = params.lipschitz(obs, op)
    one_grad = kernel.evals_per_step == 1
    # one-gradient chains are thinned 1-in-s so every ACF entry costs s gradients
    acf_every = cfg.s if one_grad else 1

    mean_obs = dg.PosteriorMeanObserver(kernel, truth=truth)
    logp = dg.ScalarTrace(lambda st: dg.log_posterior(st.x, obs, op, params.theta), "log_posterior",
                          cfg.thinning, kernel.evals_per_step * cfg.thinning)
    observers = [mean_obs, logp]
    window = None
    if cfg.keep_samples:
        window = dg.SampleWindow(cfg.keep_samples, acf_every)
        observers.append(window)
    res = sm.run_chain(kernel, None, cfg.n_samples, cfg.burn_in, cfg.thinning, observers)

    tag = cfg.sampler
    files = []
    post_mean = dg.rb_posterior_mean(mean_obs)
    np.save(out / f"mean_{tag}.npy", post_mean)
    dg.write_image_with_sidecar(out / f"mean_{tag}.png", post_mean)
    files += [f"mean_{tag}.npy", f"mean_{tag}.png", f"mean_{tag}.png.json"]
    logp.series().write_csv(out / f"logpost_{tag}.csv")
    files.append(f"logpost_{tag}.csv")
    dg.ScalarSeries(mean_obs.mse_trace, "mse", cfg.thinning,
                    kernel.evals_per_step * cfg.thinning).write_csv(out / f"mse_{tag}.csv")
    files.append(f"mse_{tag}.csv")
    if res.n_retained >= 2:
        for f in dg.STD_FACTORS:
            if truth.shape[0] % f == 0 and truth.shape[1] % f == 0:
                sd = dg.pixelwise_std(mean_obs.multiscale, f)
                dg.write_image_with_sidecar(out / f"std_{tag}_x{f}.png", sd)
                files += [f"std_{tag}_x{f}.png", f"std_{tag}_x{f}.png.json"]

    results = {"mse_final": dg.mse(post_mean, truth), "n_retained": res.n_retained}
    if window is not None and len(window.samples) >= 2:
        if cfg.reference_eigvec:
            v = np.load(cfg.reference_eigvec)
            series = dg.ScalarSeries(dg.project(window.samples, v), "slowest_component")
        else:
            series, lam_max, v = dg.slowest_component(window.samples)
            results["leading_eigenvalue"] = lam_max
            np.save(out / f"eigvec_{tag}.npy", v)
            files.append(f"eigvec_{tag}.npy")
        series.evals_per_entry = kernel.evals_per_step * acf_every * cfg.thinning
        series.write_csv(out / f"slowest_{tag}.csv")
        files.append(f"slowest_{tag}.csv")
        try:
            results["ess"] = dg.ess(series)
        except dg.DiagnosticsError:
            results["ess"] = float("nan")
        results["ess_entries"] = len(series)

    manifest = {
        "command": "sample", "config": asdict(cfg), "versions": _versions(),
        "derived": {"sigma2": obs.sigma2, "L_f": lip.L_f, "L": lip.L,
                    "L_a": lip.L_a if params.rho2 is not None else None,
                    "lambda": params.lam, "theta": params.theta, "rho2": params.rho2,
                    "delta": kernel.delta, "l_s": getattr(getattr(kernel, "coeffs", None), "l_s", None),
                    "evals_per_step": kernel.evals_per_step},
        "observation": {"sigma2": obs.sigma2, "shape": list(truth.shape), "y_sum": float(obs.y.sum())},
        "results": results,
        "grad_evals": res.grad_evals,
        "timings": {"wall_s": res.wall_time},
        "outputs": files,
    }
    _write_json(out / f"sample_{tag}.json", manifest)
    return manifest


def cmd_diagnose(manifest_path, max_lag=None):
    mpath = Path(manifest_path)
    if not mpath.exists():
        raise ConfigError(f"manifest not found: {mpath}")
    man = json.loads(mpath.read_text())
    tag = man["config"]["sampler"]
    out = mpath.parent
    rows = []
    for name in (f"slowest_{tag}.csv", f"logpost_{tag}.csv"):
        p = out / name
        if not p.exists():
            continue
        vals = np.loadtxt(p, delimiter=",", skiprows=1, usecols=2, ndmin=1)
        if vals.size < 3:
            continue
        lag = min(vals.size - 1, max_lag or vals.size - 1)
        rho = dg.acf(vals, lag)
        stem = name[:-4]
        dg.write_table_csv(out / f"acf_{stem}.csv", [{"lag": k, "acf": repr(float(r))} for k, r in enumerate(rho)])
        rows.append({"series": stem, "n": int(vals.size), "ess": dg.ess(vals, lag)})
    _write_json(out / f"diagnose_{tag}.json", {"manifest": mpath.name, "series": rows})
    return rows


def cmd_compare(manifest_paths, out):
    if len(manifest_paths) < 2:
        raise ConfigError("compare needs at least two manifests")
    mans = []
    for p in manifest_paths:
        p = Path(p)
        if not p.exists():
            raise ConfigError(f"manifest not found: {p}")
        mans.append((p, json.loads(p.read_text())))
    ref_obs = mans[0][1]["observation"]
    for p, m in mans[1:]:
        if m["observation"] != ref_obs:
            raise ConfigError(f"{p} was run on a different observation")
    base = next((m for _, m in mans if m["config"]["sampler"] == "myula"), mans[0][1])

    def ess_per_grad(m):
        return m["results"].get("ess", float("nan")) / m["grad_evals"]

    rows = []
    for p, m in mans:
        rows.append({
            "manifest": p.name, "sampler": m["config"]["sampler"], "s": m["config"]["s"],
            "delta": m["derived"]["delta"], "grad_evals": m["grad_evals"],
            "ess": m["results"].get("ess", ""), "reference": base["config"]["sampler"],
            "speedup_vs_ref": ess_per_grad(m) / ess_per_grad(base),
            "wall_s": m["timings"]["wall_s"], "mse_final": m["results"]["mse_final"],
        })
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    dg.write_table_csv(out / "compare.csv", rows)
    # MSE traces aligned on gradient evaluations
    traces = {}
    for p, m in mans:
        tag = m["config"]["sampler"]
        f = p.parent / f"mse_{tag}.csv"
        if f.exists():
            arr = np.loadtxt(f, delimiter=",", skiprows=1, ndmin=2)
            if arr.size:
                traces[tag] = (arr[:, 1], arr[:, 2])
    if traces:
        grid_evals = np.unique(np.concatenate([g for g, _ in traces.values()]))
        aligned = []
        for ge in grid_evals:
            row = {"grad_evals": int(ge)}
            for tag, (g, v) in traces.items():
                idx = np.searchsorted(g, ge, side="right") - 1
                row[tag] = repr(float(v[idx])) if idx >= 0 else ""
            aligned.append(row)
        dg.write_table_csv(out / "compare_mse.csv", aligned, ["grad_evals"] + list(traces))
    return rows


# --- entry point --------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="proxmcmc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="TOML config or JSON manifest")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--keep-samples", dest="keep_samples", type=int, metavar="INT")
        p.add_argument("--sampler", choices=sm.SAMPLERS)
        p.add_argument("--s", type=int)
        p.add_argument("--delta-frac", dest="delta_frac", type=float)

    for name in ("simulate", "sapg", "sample"):
        common(sub.add_parser(name))
    d = sub.add_parser("diagnose")
    d.add_argument("--manifest", required=True)
    d.add_argument("--max-lag", type=int)
    c = sub.add_parser("compare")
    c.add_argument("manifests", nargs="+")
    c.add_argument("--out", default=".")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "diagnose":
            rows = cmd_diagnose(args.manifest, args.max_lag)
            for r in rows:
                print(f"{r['series']}: n={r['n']} ess={r['ess']:.1f}")
        elif args.command == "compare":
            for r in cmd_compare(args.manifests, args.out):
                print(f"{r['sampler']:>10}  ess={r['ess']}  speedup={r['speedup_vs_ref']:.2f}")
        else:
            cfg = resolve_config(args)
            man = {"simulate": cmd_simulate, "sapg": cmd_sapg, "sample": cmd_sample}[args.command](cfg)
            print(json.dumps(man.get("results", man.get("derived")), default=_json_default))
    except (sm.SamplerError, sp.SapgError, dg.DiagnosticsError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
