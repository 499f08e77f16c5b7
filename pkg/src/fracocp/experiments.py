"""Convergence studies on the unit disc and the L-shaped domain."""
from dataclasses import asdict, dataclass, field, fields
import json
import logging
import math
from pathlib import Path

import numpy as np

from .assembly import QuadratureSpec, assemble_stiffness
from .control import FullyDiscreteOCP, VariationalOCP
from .errors import ConvergenceRecord, energy_error_state, l2_error, reference_errors
from .exact import DiscBenchmark
from .mesh import GradingSpec, build_disc_mesh, build_lshape_mesh

__all__ = [
    "ExperimentConfig", "EXPERIMENTS", "default_config", "load_config", "save_config",
    "run_disc_quasiuniform", "run_disc_graded", "run_lshape", "run", "emit_plots",
    "lshape_target", "read_records",
]

log = logging.getLogger(__name__)

EXPERIMENTS = ("disc_quasiuniform", "disc_graded", "lshape")

LSHAPE_CENTERS = ((0.5, 0.5), (1.5, 0.5), (0.5, 1.5))
LSHAPE_RADIUS = 0.2

_DEFAULTS = {
    "disc_quasiuniform": dict(s_values=[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], alpha=0.1, a=-0.9, b=0.9,
                              mesh_levels=[2 / 15, 1 / 15, 1 / 30], mu=1.0),
    "disc_graded": dict(s_values=[0.75], alpha=0.1, a=-0.9, b=0.9, mesh_levels=[1 / 5, 1 / 10, 1 / 20], mu=2.0),
    "lshape": dict(s_values=[0.75], alpha=0.1, a=0.0, b=30.0, mesh_levels=[1 / 4, 1 / 8, 1 / 12], mu=1.0,
                   reference_h=1 / 48),
}


@dataclass
class ExperimentConfig:
    experiment: str
    s_values: list
    alpha: float = 0.1
    a: float = -0.9
    b: float = 0.9
    mesh_levels: list = field(default_factory=list)
    mu: float = 1.0
    quadrature: dict = field(default_factory=dict)
    output_dir: str = "results"
    scheme: str = "fully_discrete"
    reference_h: float = None
    opt_tol: float = 1e-8
    max_iter: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        self.s_values = [float(s) for s in self.s_values]
        self.mesh_levels = [float(h) for h in self.mesh_levels]
        if not self.s_values or any(not 0.0 < s < 1.0 for s in self.s_values):
            raise ValueError("all s must lie in (0, 1)")
        if not self.mesh_levels or any(h <= 0 for h in self.mesh_levels):
            raise ValueError("mesh_levels must be non-empty and positive")
        if any(h2 >= h1 for h1, h2 in zip(self.mesh_levels, self.mesh_levels[1:])):
            raise ValueError("mesh_levels must be strictly decreasing in h")
        if not 1.0 <= self.mu <= 2.0:
            raise ValueError("mu must lie in [1, 2]")
        if self.scheme not in ("fully_discrete", "variational"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.a < self.b:
            raise ValueError("bounds must satisfy a < b")
        if self.experiment == "lshape":
            if self.reference_h is None:
                self.reference_h = _DEFAULTS["lshape"]["reference_h"]
            if self.reference_h >= self.mesh_levels[-1]:
                raise ValueError("reference_h must be finer than every compared level")
        self.quad_spec()

    def quad_spec(self):
        return QuadratureSpec(**self.quadrature)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


def default_config(experiment, **overrides):
    d = dict(experiment=experiment, **_DEFAULTS[experiment])
    d.update(overrides)
    return ExperimentConfig.from_dict(d)


def load_config(path, experiment=None):
    """Read a JSON config; missing keys take the defaults of its experiment."""
    with open(path) as fh:
        d = json.load(fh)
    exp = d.get("experiment", experiment)
    if experiment is not None and exp != experiment:
        raise ValueError(f"config is for {exp!r}, not {experiment!r}")
    base = dict(experiment=exp, **_DEFAULTS[exp])
    base.update(d)
    return ExperimentConfig.from_dict(base)


def save_config(cfg, path):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _estimator(cfg, s):
    cls = FullyDiscreteOCP if cfg.scheme == "fully_discrete" else VariationalOCP
    return cls(s=s, alpha=cfg.alpha, a=cfg.a, b=cfg.b, opt_tol=cfg.opt_tol, max_iter=cfg.max_iter,
               quad=cfg.quad_spec())


def _tag(s):
    return f"s{s:.2f}"


def _disc_study(cfg, basis):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    meshes = [build_disc_mesh(GradingSpec(h, cfg.mu)) for h in cfg.mesh_levels]
    records, levels = {}, []
    for s in cfg.s_values:
        bm = DiscBenchmark(s, cfg.alpha, cfg.a, cfg.b)
        rec = ConvergenceRecord(basis=basis, label=_tag(s))
        for k, (h, mesh) in enumerate(zip(cfg.mesh_levels, meshes)):
            A = assemble_stiffness(mesh, s, cfg.quad_spec())
            est = _estimator(cfg, s).fit(mesh, bm.f, bm.u_d, A)
            zload = est.space_.B @ est.control_.values
            e_en = energy_error_state(mesh, est.state_, bm, zload, f_load=est.system_.F)
            e_z = l2_error(mesh, est.control_, bm.z_bar, 8)
            e_u = l2_error(mesh, est.state_, bm.u_bar, 8)
            rec.add(h, mesh.n_dofs, e_en, e_z, e_u)
            levels.append(dict(s=s, level=k, h=h, vertices=mesh.n_vertices, triangles=mesh.n_triangles,
                               dofs=mesh.n_dofs, iterations=est.n_iter_))
            log.info("s=%.2f h=%.4g N=%d energy=%.4e control=%.4e", s, h, mesh.n_dofs, e_en, e_z)
        rec.to_csv(out / f"{cfg.experiment}_{_tag(s)}.csv")
        records[s] = rec
    _write_summary(out / f"{cfg.experiment}_summary.csv", records)
    _write_levels(out / f"{cfg.experiment}_levels.csv", levels)
    return records


def run_disc_quasiuniform(cfg):
    """Fully discrete (or variational) solves on quasi-uniform disc meshes; errors against the benchmark."""
    return _disc_study(cfg, "h")


def run_disc_graded(cfg):
    """Same benchmark on graded disc meshes; errors are tabulated against the number of unknowns."""
    return _disc_study(cfg, "N")


def lshape_target(x):
    """Sum of three disjoint disc indicators, radius 0.2."""
    x = np.atleast_2d(x)
    out = np.zeros(len(x))
    for c in LSHAPE_CENTERS:
        out += ((x[:, 0] - c[0]) ** 2 + (x[:, 1] - c[1]) ** 2 < LSHAPE_RADIUS ** 2)
    return out


def _one(x):
    return np.ones(len(np.atleast_2d(x)))


def run_lshape(cfg):
    """Errors on nested L-shape meshes against a solution on a finer nested mesh."""
    if cfg.scheme != "fully_discrete":
        raise ValueError("the L-shape study compares piecewise constant controls; use scheme='fully_discrete'")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    for h in cfg.mesh_levels:
        ratio = h / cfg.reference_h
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"level h={h} is not nested in the reference h={cfg.reference_h}")
    fine = build_lshape_mesh(cfg.reference_h)
    records, levels = {}, []
    for s in cfg.s_values:
        A_ref = assemble_stiffness(fine, s, cfg.quad_spec())
        ref = _estimator(cfg, s).fit(fine, _one, lshape_target, A_ref)
        rec = ConvergenceRecord(basis="h", label=_tag(s))
        for k, h in enumerate(cfg.mesh_levels):
            mesh = build_lshape_mesh(h)
            est = _estimator(cfg, s).fit(mesh, _one, lshape_target)
            e_en, e_z = reference_errors(mesh, est.state_, est.control_, fine, A_ref, ref.state_, ref.control_)
            rec.add(h, mesh.n_dofs, e_en, e_z)
            levels.append(dict(s=s, level=k, h=h, vertices=mesh.n_vertices, triangles=mesh.n_triangles,
                               dofs=mesh.n_dofs, iterations=est.n_iter_,
                               min_control=float(est.control_.values.min())))
        levels.append(dict(s=s, level="reference", h=cfg.reference_h, vertices=fine.n_vertices,
                           triangles=fine.n_triangles, dofs=fine.n_dofs, iterations=ref.n_iter_,
                           min_control=float(ref.control_.values.min())))
        del A_ref
        log.warning("rates on the last levels are inflated because errors are measured against a "
                    "discrete reference solution rather than the exact one")
        rec.to_csv(out / f"lshape_{_tag(s)}.csv")
        records[s] = rec
    _write_summary(out / "lshape_summary.csv", records)
    _write_levels(out / "lshape_levels.csv", levels)
    return records


def run(cfg):
    return {"disc_quasiuniform": run_disc_quasiuniform, "disc_graded": run_disc_graded,
            "lshape": run_lshape}[cfg.experiment](cfg)


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _write_summary(path, records):
    lines = ["s,levels,basis,fit_energy,fit_control,last_rate_energy,last_rate_control"]
    for s, rec in records.items():
        if len(rec) >= 2:
            fe, fc = rec.fitted("e_energy"), rec.fitted("e_l2_control")
            le, lc = rec.rates("e_energy")[-1], rec.rates("e_l2_control")[-1]
        else:
            fe = fc = le = lc = None
        lines.append(",".join([repr(s), str(len(rec)), rec.basis, _fmt(fe), _fmt(fc), _fmt(le), _fmt(lc)]))
    Path(path).write_text("\n".join(lines) + "\n")


def _write_levels(path, levels):
    keys = ["s", "level", "h", "vertices", "triangles", "dofs", "iterations", "min_control"]
    lines = [",".join(keys)]
    for row in levels:
        lines.append(",".join("" if row.get(k) is None else str(row[k]) for k in keys))
    Path(path).write_text("\n".join(lines) + "\n")


def read_records(directory):
    """Records from ``<experiment>_s*.csv`` files, keyed by file stem."""
    directory = Path(directory)
    basis = "h"
    cfg_path = directory / "config.json"
    if cfg_path.exists():
        exp = json.loads(cfg_path.read_text()).get("experiment")
        basis = "N" if exp == "disc_graded" else "h"
    out = {}
    for p in sorted(directory.glob("*_s[0-9]*.csv")):
        out[p.stem] = ConvergenceRecord.from_csv(p, basis=basis, label=p.stem)
    return out


# --------------------------------------------------------------------------- plots

_ERRORS = (("e_energy", "energy error of the state"), ("e_l2_control", "L2 error of the control"))


def _xvalues(rec):
    return np.asarray(rec.N, float) if rec.basis == "N" else 1.0 / np.asarray(rec.h)


def emit_plots(records, out_dir, prefix="errors"):
    """One log-log SVG and one gnuplot data file per error type.

    Slope guides of -1/2 and -1 are drawn against ``1/h`` (or ``N`` for
    graded records).  Empty records are skipped with a warning.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    recs = {k: r for k, r in dict(records).items() if len(r) > 0}
    for k in set(dict(records)) - set(recs):
        log.warning("record %s is empty; skipped", k)
    if not recs:
        log.warning("no data to plot")
        return []
    written = []
    xlabel = "N" if all(r.basis == "N" for r in recs.values()) else "1/h"
    for key, title in _ERRORS:
        plt.rcParams["svg.hashsalt"] = "fracocp"
        plt.rcParams["svg.fonttype"] = "none"
        fig, ax = plt.subplots(figsize=(5.5, 4.2))
        dat = [f"# {title}", f"# columns: {xlabel} error"]
        x_all, y_all = [], []
        for name, rec in sorted(recs.items()):
            x, y = _xvalues(rec), np.asarray(getattr(rec, key))
            ax.loglog(x, y, "o-", label=rec.label or name)
            x_all.extend(x)
            y_all.extend(y)
            dat.append(f"# {rec.label or name}")
            dat.extend(f"{float(a)!r} {float(b)!r}" for a, b in zip(x, y))
            dat.extend(["", ""])
        x0, x1 = min(x_all), max(x_all)
        if x1 <= x0:
            x1 = 2.0 * x0
        y0 = max(y_all)
        for p, style in ((0.5, "k--"), (1.0, "k:")):
            gx = np.array([x0, x1])
            gy = y0 * (gx / x0) ** (-p)
            ax.loglog(gx, gy, style, linewidth=0.8, label=f"slope -{p:g}")
            dat.append(f"# guide slope -{p:g}")
            dat.extend(f"{float(a)!r} {float(b)!r}" for a, b in zip(gx, gy))
            dat.extend(["", ""])
        ax.set_xlabel(xlabel)
        ax.set_ylabel(title)
        ax.legend(fontsize=7)
        fig.tight_layout()
        svg = out / f"{prefix}_{key}.svg"
        fig.savefig(svg, format="svg", metadata={"Date": None})
        plt.close(fig)
        (out / f"{prefix}_{key}.dat").write_text("\n".join(dat) + "\n")
        written += [svg, out / f"{prefix}_{key}.dat"]
    return written
