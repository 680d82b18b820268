"""Experiment configuration: presets, overrides and validation.

A config is a YAML tree. Every key is checked against the schema below and
unknown keys are rejected. Scalar sweep axes may be given as a single value
or a list.
"""

import copy

import yaml

from .errors import ConfigError

ALGORITHMS = ('gd', 'adam', 'ce', 'zopo', 'mpc', 'fixed')
PRESETS = ('bench3d', 'dhs-industrial')

_SCHEMA = {
    'preset': str,
    'algorithms': list,
    'seeds': list,
    'steps': int,
    'warm_start': int,
    'cost_stride': int,
    'equilibrium_window': int,
    'workers': int,
    'out_dir': str,
    'plots': bool,
    'noise': {'sigma_w': float, 'sigma_s': float, 'distribution': str, 'bound': float},
    'mismatch': {'delta_e': list, 'delta_c_amp': list, 'waveform': str, 'period': int},
    'bench3d': {'bw': list, 'ueps_mode': list},
    'economics': {'f_g': list, 'f_d': float, 'total_demand': float, 'tau': float,
                  'initial_dispatch': str},
    'weights': {'q_scale': float, 'r_scale': float},
    'gd': {'eta': float, 'relift': bool, 'ueps_mode': str},
    'adam': {'eta0': float, 'beta1': float, 'beta2': float, 'epsilon': float,
             'decay': bool, 'relift': bool, 'project_grad': bool, 'ueps_mode': str},
    'zopo': {'radius': float, 'rollout_len': int, 'n_dir': int, 'stepsize': float},
    'mpc': {'horizon': int},
}

_OPTIONAL_NONE = {('noise', 'bound')}

_COMMON = {
    'algorithms': ['gd'],
    'seeds': [0],
    'cost_stride': 1,
    'equilibrium_window': 500,
    'workers': 1,
    'out_dir': 'results',
    'plots': True,
    'weights': {'q_scale': 1.0, 'r_scale': 1.0},
    'gd': {'eta': 0.01, 'relift': True, 'ueps_mode': 'estimate'},
    'adam': {'eta0': 0.01, 'beta1': 0.9, 'beta2': 0.999, 'epsilon': 1e-8, 'decay': True,
             'relift': True, 'project_grad': True, 'ueps_mode': 'estimate'},
    'zopo': {'radius': 0.05, 'rollout_len': 150, 'n_dir': 10, 'stepsize': 1e-3},
    'mpc': {'horizon': 20},
}


def preset_bench3d():
    cfg = copy.deepcopy(_COMMON)
    cfg.update({
        'preset': 'bench3d',
        'steps': 2000,
        'warm_start': 50,
        'noise': {'sigma_w': 0.1, 'sigma_s': 1.0, 'distribution': 'gaussian', 'bound': None},
        'mismatch': {'delta_e': [0.1], 'delta_c_amp': [0.0], 'waveform': 'uniform-iid',
                     'period': 1000},
        'bench3d': {'bw': ['Bw1', 'Bw2', 'Bw3', 'Bw4'], 'ueps_mode': ['estimate', 'identity']},
    })
    return cfg


def preset_dhs_industrial():
    cfg = copy.deepcopy(_COMMON)
    cfg.update({
        'preset': 'dhs-industrial',
        'algorithms': ['gd', 'adam'],
        'steps': 10000,
        'warm_start': 100,
        'cost_stride': 100,
        'noise': {'sigma_w': 0.0042, 'sigma_s': 0.1, 'distribution': 'gaussian', 'bound': None},
        'mismatch': {'delta_e': [-0.15, 0.15, -0.20, 0.20, -0.01, 0.01, -0.02, 0.02],
                     'delta_c_amp': [0.0], 'waveform': 'uniform-iid', 'period': 1000},
        'economics': {'f_g': [1.0, 2.0, 3.0], 'f_d': 1.0, 'total_demand': 10.0, 'tau': 0.1,
                      'initial_dispatch': 'equal'},
    })
    cfg['gd'] = dict(cfg['gd'], eta=3e4)
    cfg['adam'] = dict(cfg['adam'], eta0=0.3)
    return cfg


def preset_dhs_time_varying():
    """Time-varying sweep at a fixed 20% static mismatch."""
    cfg = preset_dhs_industrial()
    cfg['mismatch'] = dict(cfg['mismatch'], delta_e=[0.20], delta_c_amp=[0.10, 0.30, 0.50, 0.80])
    return cfg


PRESET_BUILDERS = {
    'bench3d': preset_bench3d,
    'dhs-industrial': preset_dhs_industrial,
    'dhs-industrial-tv': preset_dhs_time_varying,
}


def get_preset(name):
    try:
        return PRESET_BUILDERS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESET_BUILDERS)}") from None


def _merge(base, over, path=()):
    out = copy.deepcopy(base)
    for key, value in over.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value, path + (key,))
        else:
            out[key] = copy.deepcopy(value)
    return out


def _check(node, schema, path=()):
    if not isinstance(node, dict):
        raise ConfigError(f"{'.'.join(path) or 'config'} must be a mapping")
    for key, value in node.items():
        where = '.'.join(path + (key,))
        if key not in schema:
            raise ConfigError(f"unknown config key {where!r}")
        expected = schema[key]
        if isinstance(expected, dict):
            _check(value, expected, path + (key,))
            continue
        if value is None and (path + (key,)) in _OPTIONAL_NONE:
            continue
        if expected is list:
            if not isinstance(value, list):
                node[key] = [value]
            continue
        if expected is float and isinstance(value, int) and not isinstance(value, bool):
            node[key] = float(value)
            continue
        if expected is int and isinstance(value, bool):
            raise ConfigError(f"{where} must be an integer")
        if not isinstance(value, expected):
            raise ConfigError(f"{where} must be of type {expected.__name__}")


def resolve(raw):
    """Merge ``raw`` over its preset and validate the result."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    if 'preset' not in raw:
        raise ConfigError("config needs a 'preset' key")
    _check(copy.deepcopy(raw), _SCHEMA)
    cfg = _merge(get_preset(raw['preset']), {k: v for k, v in raw.items() if k != 'preset'})
    _check(cfg, _SCHEMA)
    validate(cfg)
    return cfg


def validate(cfg):
    if cfg['preset'] not in PRESETS:
        raise ConfigError(f"preset must be one of {PRESETS}")
    if not cfg['seeds']:
        raise ConfigError("seeds list is empty")
    if any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in cfg['seeds']):
        raise ConfigError("seeds must be non-negative integers")
    if len(set(cfg['seeds'])) != len(cfg['seeds']):
        raise ConfigError("seeds must be distinct")
    if not cfg['algorithms']:
        raise ConfigError("algorithms list is empty")
    for a in cfg['algorithms']:
        if a not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}; choose from {ALGORITHMS}")
    if cfg['steps'] < 1:
        raise ConfigError("steps must be positive")
    if cfg['warm_start'] < 0 or cfg['cost_stride'] < 1 or cfg['workers'] < 1:
        raise ConfigError("warm_start >= 0, cost_stride >= 1 and workers >= 1 required")
    if cfg['equilibrium_window'] < 100:
        raise ConfigError("equilibrium_window must be at least 100")
    for a in cfg['mismatch']['delta_c_amp']:
        if a < 0:
            raise ConfigError("delta_c_amp entries must be non-negative")
    for mode_key in ('gd', 'adam'):
        if cfg[mode_key]['ueps_mode'] not in ('estimate', 'identity'):
            raise ConfigError(f"{mode_key}.ueps_mode must be 'estimate' or 'identity'")
    if cfg['preset'] == 'bench3d':
        if 'bench3d' not in cfg:
            raise ConfigError("bench3d preset needs a 'bench3d' section")
        for bw in cfg['bench3d']['bw']:
            if bw not in ('Bw1', 'Bw2', 'Bw3', 'Bw4'):
                raise ConfigError(f"unknown disturbance map {bw!r}")
        for mode in cfg['bench3d']['ueps_mode']:
            if mode not in ('estimate', 'identity'):
                raise ConfigError(f"unknown covariance mode {mode!r}")
    elif 'economics' not in cfg:
        raise ConfigError("dhs preset needs an 'economics' section")
    return cfg


def load(path):
    with open(path, encoding='utf-8') as fh:
        raw = yaml.safe_load(fh)
    return resolve(raw if raw is not None else {})


def dump(cfg):
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False, allow_unicode=True)
