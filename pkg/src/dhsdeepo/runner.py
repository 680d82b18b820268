"""Sweep execution and result files.

Output layout under ``out_dir``::

    config.yaml          resolved configuration
    runs/<run_id>.csv    per-step records of one run
    summary.csv          one row per (setting, algorithm), median over seeds
    plot_data.csv        long-format series for figures
    figures/*.png        rendered figures (when plotting is enabled)
"""

import csv
import io
import itertools
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import config as config_mod
from . import experiments

log = logging.getLogger(__name__)

RUN_COLUMNS = ('t', 'cost', 'rel_error', 'e_norm', 'rho', 'snr')
SUMMARY_COLUMNS = ('preset', 'bw', 'ueps_mode', 'delta_e', 'delta_c_amp', 'algo', 'n_seeds',
                   'n_failed', 'median_rel_error', 'q25_rel_error', 'q75_rel_error',
                   'median_window_abs_e_max', 'imp')
PLOT_COLUMNS = ('figure', 'series', 'x', 'y')
TRACE_EVERY = 10
DEEPO_ALGOS = ('gd', 'adam')


def fmt(v):
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if np.isnan(v):
        return 'nan'
    if np.isinf(v):
        return 'inf' if v > 0 else '-inf'
    return repr(v)


@dataclass(frozen=True)
class RunSpec:
    preset: str
    algo: str
    seed: int
    delta_e: float
    delta_c_amp: float = 0.0
    bw: str = ''
    ueps_mode: str = ''

    @property
    def setting(self):
        return (self.preset, self.bw, self.ueps_mode, self.delta_e, self.delta_c_amp)

    @property
    def run_id(self):
        parts = [self.algo]
        if self.bw:
            parts += [self.bw, self.ueps_mode]
        parts += [f"de{self.delta_e:+.4f}", f"dc{self.delta_c_amp:.4f}", f"s{self.seed}"]
        return '_'.join(parts)


@dataclass
class RunResult:
    spec: RunSpec
    rows: list
    final_rel_error: float
    failed: str = ''
    events: int = 0
    window_abs_e: list = field(default_factory=list)
    traces: dict = field(default_factory=dict)


def expand(cfg):
    """All runs of a resolved config, in a fixed order."""
    specs = []
    mm = cfg['mismatch']
    if cfg['preset'] == 'bench3d':
        settings = [(bw, mode, de, 0.0) for bw in cfg['bench3d']['bw']
                    for mode in cfg['bench3d']['ueps_mode'] for de in mm['delta_e']]
    else:
        settings = [('', '', de, dc) for dc in mm['delta_c_amp'] for de in mm['delta_e']]
    for (bw, mode, de, dc), algo, seed in itertools.product(settings, cfg['algorithms'],
                                                             cfg['seeds']):
        if bw and algo not in DEEPO_ALGOS and mode != cfg['bench3d']['ueps_mode'][0]:
            continue
        specs.append(RunSpec(cfg['preset'], algo, int(seed), float(de), float(dc), bw,
                             mode if (not bw or algo in DEEPO_ALGOS) else '-'))
    return specs


def build(spec, cfg):
    nz = cfg['noise']
    steps, warm = cfg['steps'], cfg['warm_start']
    if spec.preset == 'bench3d':
        exp = experiments.bench3d_experiment(spec.seed, spec.bw, spec.delta_e, steps, warm,
                                             nz['sigma_w'], nz['sigma_s'], nz['distribution'])
    else:
        ec, w = cfg['economics'], cfg['weights']
        exp = experiments.industrial_experiment(
            spec.seed, spec.delta_e, spec.delta_c_amp, cfg['mismatch']['waveform'],
            cfg['mismatch']['period'], steps, warm, nz['sigma_w'], nz['sigma_s'],
            nz['distribution'], tuple(ec['f_g']), ec['f_d'], ec['total_demand'], ec['tau'],
            ec['initial_dispatch'], w['q_scale'], w['r_scale'])
    if nz.get('bound') is not None:
        exp.noise = type(exp.noise)(exp.noise.sigma_w, exp.noise.sigma_s,
                                    exp.noise.distribution, nz['bound'])
    params = {k: dict(cfg[k]) for k in ('gd', 'adam', 'zopo', 'mpc')}
    if spec.algo in DEEPO_ALGOS and spec.ueps_mode not in ('', '-'):
        params[spec.algo]['ueps_mode'] = spec.ueps_mode
    return exp, experiments.make_controller(exp, spec.algo, params)


def execute(spec, cfg, keep_traces=False):
    exp, controller = build(spec, cfg)
    tr = experiments.run(exp, controller, cost_stride=cfg['cost_stride'])
    warm = tr.warm
    rel = tr.rel_error
    rows = []
    for i, t in enumerate(tr.cost_t):
        e_norm = float(np.linalg.norm(tr.x[warm + t, exp.n_T:])) if exp.n_T else np.nan
        rows.append((int(t), tr.cost[i], rel[i], e_norm, tr.rho[i], tr.snr[i]))
    window = []
    traces = {}
    if exp.n_T is not None and not tr.failed:
        W = cfg['equilibrium_window']
        e = tr.e[1:]
        window = [float(v) for v in np.abs(e[-W:].mean(axis=0))]
        if keep_traces:
            traces = _physical_traces(exp, tr)
    return RunResult(spec, rows, tr.final_rel_error, tr.failed or '', len(tr.events), window,
                     traces)


def _physical_traces(exp, tr):
    from .augment import physical_from_augmented
    # row j pairs T_{j+1}, hG_{j+1} and e_{j+1}; x[0] already holds T_1 - T_0
    T, hG = physical_from_augmented(tr.x[:-1], tr.u, exp.extras['T0'], exp.extras['hG0'])
    idx = np.arange(0, len(T), TRACE_EVERY)
    return {'temperature': T[idx], 'heat_generation': hG[idx],
            'optimality_error': tr.e[1:][idx], 'k': idx}


def _execute_star(args):
    return execute(*args)


def run_all(cfg, workers=None):
    specs = expand(cfg)
    first_seed = cfg['seeds'][0]
    jobs = [(s, cfg, s.seed == first_seed) for s in specs]
    workers = cfg['workers'] if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_execute_star, jobs))
    return [_execute_star(j) for j in jobs]


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator='\n')
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def summarize(results):
    """Median/IQR of final relative error per (setting, algorithm) plus IMP."""
    groups = {}
    for r in results:
        groups.setdefault((r.spec.setting, r.spec.algo), []).append(r)
    medians = {}
    rows = []
    for (setting, algo), rs in groups.items():
        ok = np.array([r.final_rel_error for r in rs if not r.failed])
        q = np.percentile(ok, [50, 25, 75]) if ok.size else [np.nan] * 3
        win = [max(r.window_abs_e) for r in rs if r.window_abs_e]
        medians[(setting, algo)] = q[0]
        rows.append([*setting, algo, len(rs), sum(1 for r in rs if r.failed), q[0], q[1], q[2],
                     float(np.median(win)) if win else np.nan])
    for row in rows:
        setting, algo = tuple(row[:5]), row[5]
        gd = medians.get((setting, 'gd'))
        adam = medians.get((setting, 'adam'))
        row.append(imp(gd, adam) if gd is not None and adam is not None else '')
    return rows


def imp(gd, adam):
    """Relative improvement of ADAM over GD, ``(GD - ADAM) / GD``."""
    return (gd - adam) / gd


def plot_series(results):
    rows = []
    for r in results:
        label = r.spec.run_id
        for t, cost, rel, e_norm, rho, snr in r.rows:
            rows.append(('rel_error', label, t, rel))
            if not np.isnan(e_norm):
                rows.append(('e_norm', label, t, e_norm))
        for name, arr in sorted(r.traces.items()):
            if name == 'k':
                continue
            for k, vec in zip(r.traces['k'], arr):
                for j, v in enumerate(vec):
                    rows.append((name, f"{r.spec.algo}_de{r.spec.delta_e:+.4f}"
                                       f"_dc{r.spec.delta_c_amp:.4f}[{j}]", int(k), v))
    return rows


def write_outputs(cfg, results, out_dir, plots=True):
    os.makedirs(os.path.join(out_dir, 'runs'), exist_ok=True)
    with open(os.path.join(out_dir, 'config.yaml'), 'w', encoding='utf-8') as fh:
        fh.write(config_mod.dump(cfg))
    for r in results:
        with open(os.path.join(out_dir, 'runs', r.spec.run_id + '.csv'), 'w',
                  encoding='utf-8', newline='') as fh:
            fh.write(_csv_text(RUN_COLUMNS, r.rows))
    summary = summarize(results)
    with open(os.path.join(out_dir, 'summary.csv'), 'w', encoding='utf-8', newline='') as fh:
        fh.write(_csv_text(SUMMARY_COLUMNS, summary))
    series = plot_series(results)
    with open(os.path.join(out_dir, 'plot_data.csv'), 'w', encoding='utf-8', newline='') as fh:
        fh.write(_csv_text(PLOT_COLUMNS, series))
    if plots:
        from .plotting import render_all
        render_all(results, os.path.join(out_dir, 'figures'))
    return summary


def run(cfg, out_dir=None, workers=None, plots=None):
    """Execute a resolved config and write all artifacts. Returns the results."""
    config_mod.validate(cfg)
    out_dir = cfg['out_dir'] if out_dir is None else out_dir
    plots = cfg['plots'] if plots is None else plots
    results = run_all(cfg, workers)
    for r in results:
        if r.failed:
            log.warning("run %s failed: %s", r.spec.run_id, r.failed)
    write_outputs(cfg, results, out_dir, plots)
    return results
