"""Experiment harness: INI configs, presets, CSV/JSON output, CLI.

A config is flat key-value INI with four sections (problem, noise,
quantization, schedule) plus a [run] section.  Every key has a default, so a
minimal file only names the problem preset.  ``run_experiment`` writes three
files next to each other: ``<out>.csv`` (one row per checkpoint),
``<out>.json`` (summary), and ``<out>.ini`` (the fully resolved config, which
reloads to reproduce the run byte for byte).

Example::

    [problem]
    preset = bilinear
    d = 20
    K = 4

    [noise]
    kind = absolute
    sigma = 0.1

    [run]
    T = 10000
    seed = 3
    out = runs/demo

Checkpoints are the powers of two up to T, plus T itself.  The reported
slope is a least-squares fit of log10(gap) against log10(t) over the rows
with t >= T/100.
"""

import argparse
import configparser
import copy
import json
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import adapt, codec, solver, vi
from .levels import LevelFamily, assignment_from_layer_sizes, sequence_from_spec


class ParseError(ValueError):
    """Bad or contradictory config input; message names the field."""


class UnknownPreset(KeyError):
    def __str__(self):
        return self.args[0] if self.args else ""


class IncomparableConfigs(ValueError):
    """compare() got configs that differ outside the allowed axes."""


_DEFAULTS = {
    "problem": {"preset": "", "d": "20", "K": "4", "seed": "7"},
    "noise": {"kind": "absolute", "sigma": "0.1", "clip": "0"},
    "quantization": {
        "enabled": "true",
        "M": "2",
        "budgets": "3",
        "levels": "",
        "layer_sizes": "",
        "q": "2",
        "protocol": codec.PROTOCOL_MAIN,
        "scheme": codec.SCHEME_HUFFMAN,
        "update_period": "1000",
        "grid": "512",
        "estimator": "empirical",
        "samples_per_node": "16",
    },
    "schedule": {"kind": "general", "q_hat": "0.25", "c": "0.5"},
    "run": {
        "T": "10000",
        "seed": "0",
        "out": "run",
        "algorithm": "qoda",
        "step": "0.3",
        "checkpoints": "pow2",
    },
}

_PROBLEM_KINDS = ("bilinear", "strongly_monotone", "cocoercive")


@dataclass
class ExperimentConfig:
    preset: str
    d: int
    K: int
    problem_seed: int
    noise_kind: str
    sigma: float
    clip: float
    quant_enabled: bool
    M: int
    budgets: list
    levels: list
    layer_sizes: list
    q: float
    protocol: str
    scheme: str
    update_period: int
    grid: int
    estimator: str
    samples_per_node: int
    schedule_kind: str
    q_hat: float
    c: float
    T: int
    seed: int
    out: str
    algorithm: str
    step: float
    checkpoints: str


def _to_int(sec, key, raw):
    try:
        return int(raw)
    except ValueError:
        raise ParseError(f"[{sec}] {key}: expected an integer, got {raw!r}") from None


def _to_float(sec, key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ParseError(f"[{sec}] {key}: expected a number, got {raw!r}") from None


def _to_bool(sec, key, raw):
    low = str(raw).strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ParseError(f"[{sec}] {key}: expected a boolean, got {raw!r}")


def _merge(raw):
    """Overlay user-supplied sections onto the defaults, rejecting unknowns."""
    merged = copy.deepcopy(_DEFAULTS)
    for sec, entries in raw.items():
        if sec not in merged:
            raise ParseError(f"unknown section [{sec}]")
        for key, value in entries.items():
            if key not in merged[sec]:
                raise ParseError(f"[{sec}] unknown key {key!r}")
            merged[sec][key] = str(value)
    return merged


def config_from_dict(raw):
    """Resolve a nested {section: {key: value}} mapping into a config."""
    quant_raw = raw.get("quantization", {})
    if "budgets" in quant_raw and "levels" in quant_raw and str(quant_raw["levels"]).strip():
        raise ParseError("[quantization] give either budgets or explicit levels, not both")
    m = _merge(raw)

    preset = m["problem"]["preset"].strip()
    if not preset:
        raise ParseError("[problem] preset is required")
    if preset.partition(":")[0] not in _PROBLEM_KINDS:
        raise UnknownPreset(f"unknown problem preset {preset!r}")
    d = _to_int("problem", "d", m["problem"]["d"])
    K = _to_int("problem", "K", m["problem"]["K"])
    if d < 1 or K < 1:
        raise ParseError("[problem] d and K must be positive")

    noise_kind = m["noise"]["kind"].strip().lower()
    if noise_kind not in ("none", "absolute", "relative"):
        raise ParseError(f"[noise] kind: unknown value {noise_kind!r}")
    sigma = _to_float("noise", "sigma", m["noise"]["sigma"])
    clip = _to_float("noise", "clip", m["noise"]["clip"])
    if sigma < 0 or clip < 0:
        raise ParseError("[noise] sigma and clip must be non-negative")

    qsec = m["quantization"]
    M = _to_int("quantization", "M", qsec["M"])
    if M < 1:
        raise ParseError("[quantization] M must be positive")
    levels_raw = qsec["levels"].strip()
    levels = [tok.strip() for tok in levels_raw.split("|")] if levels_raw else []
    if levels and len(levels) != M:
        raise ParseError(f"[quantization] expected {M} level lists, got {len(levels)}")
    budget_toks = [tok for tok in qsec["budgets"].split(",") if tok.strip()]
    budgets = [_to_int("quantization", "budgets", tok) for tok in budget_toks]
    if len(budgets) == 1:
        budgets = budgets * M
    if len(budgets) != M:
        raise ParseError(f"[quantization] expected {M} budgets, got {len(budgets)}")
    if any(b < 0 for b in budgets):
        raise ParseError("[quantization] budgets must be non-negative")
    sizes_raw = qsec["layer_sizes"].strip()
    if sizes_raw:
        layer_sizes = [_to_int("quantization", "layer_sizes", tok) for tok in sizes_raw.split(",")]
    else:
        base, extra = divmod(d, M)
        layer_sizes = [base + (1 if i < extra else 0) for i in range(M)]
    if len(layer_sizes) != M or sum(layer_sizes) != d or min(layer_sizes) < 1:
        raise ParseError(f"[quantization] layer_sizes must be {M} positive ints summing to {d}")
    q = _to_int("quantization", "q", qsec["q"])
    if q < 1:
        raise ParseError("[quantization] q must be a positive integer")
    protocol = qsec["protocol"].strip().lower()
    if protocol not in (codec.PROTOCOL_MAIN, codec.PROTOCOL_ALTERNATING):
        raise ParseError(f"[quantization] protocol: unknown value {protocol!r}")
    scheme = qsec["scheme"].strip().lower()
    if scheme not in (codec.SCHEME_HUFFMAN, codec.SCHEME_ELIAS):
        raise ParseError(f"[quantization] scheme: unknown value {scheme!r}")
    update_period = _to_int("quantization", "update_period", qsec["update_period"])
    grid = _to_int("quantization", "grid", qsec["grid"])
    samples_per_node = _to_int("quantization", "samples_per_node", qsec["samples_per_node"])
    estimator = qsec["estimator"].strip().lower()
    if estimator not in ("empirical", "truncated-normal"):
        raise ParseError(f"[quantization] estimator: unknown value {estimator!r}")
    if update_period < 0 or grid < 2 or samples_per_node < 1:
        raise ParseError("[quantization] bad update_period / grid / samples_per_node")

    schedule_kind = m["schedule"]["kind"].strip().lower()
    if schedule_kind not in ("general", "alt", "constant"):
        raise ParseError(f"[schedule] kind: unknown value {schedule_kind!r}")
    q_hat = _to_float("schedule", "q_hat", m["schedule"]["q_hat"])
    if schedule_kind == "alt" and not 0.0 < q_hat <= 0.25:
        raise ParseError(f"[schedule] q_hat must lie in (0, 1/4], got {q_hat}")
    c = _to_float("schedule", "c", m["schedule"]["c"])
    if schedule_kind == "constant" and c <= 0:
        raise ParseError("[schedule] c must be positive")

    rsec = m["run"]
    T = _to_int("run", "T", rsec["T"])
    if T < 1:
        raise ParseError("[run] T must be >= 1")
    algorithm = rsec["algorithm"].strip().lower()
    if algorithm not in ("qoda", "extragradient"):
        raise ParseError(f"[run] algorithm: unknown value {algorithm!r}")
    step = _to_float("run", "step", rsec["step"])
    if step <= 0:
        raise ParseError("[run] step must be positive")
    if rsec["checkpoints"].strip() != "pow2":
        raise ParseError("[run] checkpoints: only 'pow2' is supported")

    return ExperimentConfig(
        preset=preset, d=d, K=K,
        problem_seed=_to_int("problem", "seed", m["problem"]["seed"]),
        noise_kind=noise_kind, sigma=sigma, clip=clip,
        quant_enabled=_to_bool("quantization", "enabled", qsec["enabled"]),
        M=M, budgets=budgets, levels=levels, layer_sizes=layer_sizes, q=q,
        protocol=protocol, scheme=scheme, update_period=update_period,
        grid=grid, estimator=estimator, samples_per_node=samples_per_node,
        schedule_kind=schedule_kind, q_hat=q_hat, c=c,
        T=T, seed=_to_int("run", "seed", rsec["seed"]), out=rsec["out"],
        algorithm=algorithm, step=step, checkpoints="pow2",
    )


def load_config(path):
    """Parse an INI file into a fully resolved ExperimentConfig."""
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep K / M / T capitalized
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ParseError(f"cannot read config {path!r}: {exc}") from None
    except configparser.Error as exc:
        raise ParseError(str(exc)) from None
    raw = {sec: dict(cp.items(sec)) for sec in cp.sections()}
    return config_from_dict(raw)


def _config_to_dict(cfg):
    """Dump a resolved config back to the {section: {key: str}} form."""
    quant = {
        "enabled": "true" if cfg.quant_enabled else "false",
        "M": str(cfg.M),
        "layer_sizes": ",".join(str(s) for s in cfg.layer_sizes),
        "q": str(cfg.q),
        "protocol": cfg.protocol,
        "scheme": cfg.scheme,
        "update_period": str(cfg.update_period),
        "grid": str(cfg.grid),
        "estimator": cfg.estimator,
        "samples_per_node": str(cfg.samples_per_node),
    }
    if cfg.levels:
        quant["levels"] = " | ".join(cfg.levels)
    else:
        quant["budgets"] = ",".join(str(b) for b in cfg.budgets)
    return {
        "problem": {
            "preset": cfg.preset, "d": str(cfg.d), "K": str(cfg.K),
            "seed": str(cfg.problem_seed),
        },
        "noise": {
            "kind": cfg.noise_kind, "sigma": f"{cfg.sigma:.12g}",
            "clip": f"{cfg.clip:.12g}",
        },
        "quantization": quant,
        "schedule": {
            "kind": cfg.schedule_kind, "q_hat": f"{cfg.q_hat:.12g}",
            "c": f"{cfg.c:.12g}",
        },
        "run": {
            "T": str(cfg.T), "seed": str(cfg.seed), "out": cfg.out,
            "algorithm": cfg.algorithm, "step": f"{cfg.step:.12g}",
            "checkpoints": cfg.checkpoints,
        },
    }


def config_to_ini(cfg):
    """Serialize a resolved config back to INI text (valid load_config input)."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    for section, entries in _config_to_dict(cfg).items():
        cp[section] = entries
    return cp


def build_noise(cfg):
    if cfg.noise_kind == "none":
        noise = None
    elif cfg.noise_kind == "absolute":
        noise = vi.AbsoluteNoise(cfg.sigma)
    else:
        noise = vi.RelativeNoise(cfg.sigma)
    if noise is not None and cfg.clip > 0:
        noise = vi.AlmostSureClip(cfg.clip, noise)
    return noise


def build_problem(cfg):
    return vi.make_problem(cfg.preset, cfg.d, cfg.K, cfg.problem_seed,
                           noise=build_noise(cfg))


def build_family(cfg):
    if cfg.levels:
        seqs = [sequence_from_spec(tok) for tok in cfg.levels]
    else:
        seqs = [sequence_from_spec(f"uniform:{b}") for b in cfg.budgets]
    assignment = assignment_from_layer_sizes(cfg.layer_sizes)
    return LevelFamily(seqs, assignment, q=cfg.q)


def build_quant(cfg):
    if not cfg.quant_enabled:
        return None
    return solver.QuantizationConfig(
        family=build_family(cfg), protocol=cfg.protocol, scheme=cfg.scheme,
        update_period=cfg.update_period, grid=cfg.grid, estimator=cfg.estimator,
        samples_per_node=cfg.samples_per_node,
    )


def build_schedule(cfg):
    if cfg.schedule_kind == "general":
        return solver.GeneralRates()
    if cfg.schedule_kind == "alt":
        return solver.AltRates(cfg.q_hat)
    return solver.ConstantRates(cfg.c)


def fit_slope(rows, T):
    """Log-log slope of gap vs t over checkpoints with t >= T/100."""
    lo = max(1.0, T / 100.0)
    pts = [(row[0], row[1]) for row in rows if row[0] >= lo and row[1] > 0]
    if len(pts) < 2:
        return float("nan")
    ts = np.log10([p[0] for p in pts])
    gs = np.log10([p[1] for p in pts])
    return float(np.polyfit(ts, gs, 1)[0])


def execute(cfg):
    """Run the configured algorithm; returns (metrics, slope)."""
    problem = build_problem(cfg)
    quant = build_quant(cfg)
    if cfg.algorithm == "qoda":
        metrics = solver.run_qoda(problem, build_schedule(cfg), cfg.T,
                                  quant=quant, seed=cfg.seed)
    else:
        metrics = solver.run_extragradient_baseline(problem, cfg.T, quant=quant,
                                                    seed=cfg.seed, step=cfg.step)
    return metrics, fit_slope(metrics.rows, cfg.T)


def _csv_text(rows):
    lines = [",".join(solver.METRIC_COLUMNS)]
    for t, gap, gamma, eta, bits, calls, eps in rows:
        lines.append(
            f"{t},{gap:.12g},{gamma:.12g},{eta:.12g},{bits},{calls},{eps:.12g}"
        )
    return "\n".join(lines) + "\n"


def _summary_dict(metrics, slope):
    s = metrics.summary
    return {
        "final_gap": s["final_gap"],
        "slope": slope,
        "total_bits": s["total_bits"],
        "eps_bar": s["eps_bar"],
        "eps_hat": s["eps_hat"],
        "n_bar": s["n_bar"],
        "oracle_calls_per_node": s["oracle_calls_per_node"],
        "T": s["T"],
    }


def run_experiment(cfg):
    """Execute one config and write <out>.csv, <out>.json, <out>.ini."""
    metrics, slope = execute(cfg)
    summary = _summary_dict(metrics, slope)
    parent = os.path.dirname(cfg.out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(cfg.out + ".csv", "w") as fh:
        fh.write(_csv_text(metrics.rows))
    with open(cfg.out + ".json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(cfg.out + ".ini", "w") as fh:
        config_to_ini(cfg).write(fh)
    return summary


def _comparable_key(cfg):
    return (
        cfg.preset, cfg.d, cfg.problem_seed, cfg.noise_kind, cfg.sigma, cfg.clip,
        cfg.quant_enabled, cfg.M, tuple(cfg.budgets), tuple(cfg.levels),
        tuple(cfg.layer_sizes), cfg.q, cfg.protocol, cfg.scheme,
        cfg.update_period, cfg.grid, cfg.estimator, cfg.samples_per_node, cfg.T,
    )


def mqv_study(cfg, probes=16):
    """Layer-wise vs pooled-global quantization objective on oracle samples.

    Draws noiseless oracle evaluations at random probe points, estimates the
    magnitude CDFs, places optimal levels per type and for one shared global
    sequence on the pooled CDF, and returns both objectives.
    """
    if not cfg.quant_enabled:
        return None
    probe_cfg = replace(cfg, noise_kind="none", clip=0.0)
    problem = build_problem(probe_cfg)
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=cfg.problem_seed, spawn_key=(9,)))
    xs = problem.x1 + rng.standard_normal((probes, cfg.d))
    samples = np.stack([op.apply(x) for x in xs for op in problem.node_ops])

    family = build_family(cfg)
    wcdf = adapt.weighted_cdf(samples, family)
    layer_seqs = []
    for m, seq in enumerate(family.sequences):
        c = wcdf.type_cdfs[m]
        layer_seqs.append(seq if c is None else adapt.optimize_levels(c, seq.alpha, cfg.grid))
    layer_family = LevelFamily(layer_seqs, family.assignment, q=family.q)
    layer_val = adapt.mqv_objective(layer_family, wcdf)

    pooled = adapt.pooled_cdf(wcdf, family)
    global_budget = max(seq.alpha for seq in family.sequences)
    global_seq = adapt.optimize_levels(pooled, global_budget, cfg.grid)
    global_val = adapt.quantization_cost(pooled, global_seq)
    return {"layerwise": layer_val, "global": global_val}


def compare(cfgs, labels=None):
    """Run several configs differing only in K / seed / schedule / algorithm.

    Returns a dict with per-run summaries and deltas against the first
    config; raises IncomparableConfigs when the fixed axes differ.
    """
    if len(cfgs) < 2:
        raise IncomparableConfigs("need at least two configs to compare")
    keys = {_comparable_key(c) for c in cfgs}
    if len(keys) > 1:
        raise IncomparableConfigs(
            "configs differ in problem / noise / quantization / T; only "
            "K, seed, schedule, and algorithm may vary")
    if labels is None:
        labels = []
        for i, c in enumerate(cfgs):
            base = os.path.basename(c.out) or f"run{i}"
            labels.append(f"{base}#{i}" if base in labels else base)

    summaries = {}
    rows_by_label = {}
    for label, cfg in zip(labels, cfgs):
        metrics, slope = execute(cfg)
        summaries[label] = _summary_dict(metrics, slope)
        rows_by_label[label] = metrics.rows

    first = labels[0]
    base = summaries[first]
    vs_first = {}
    for label in labels[1:]:
        s = summaries[label]
        vs_first[label] = {
            "gap_delta": s["final_gap"] - base["final_gap"],
            "bits_ratio": s["total_bits"] / base["total_bits"] if base["total_bits"] else float("nan"),
            "oracle_ratio": s["oracle_calls_per_node"] / base["oracle_calls_per_node"],
        }

    threshold = max(s["final_gap"] for s in summaries.values())
    bits_to_threshold = {}
    for label in labels:
        hit = None
        for row in rows_by_label[label]:
            if row[1] <= threshold:
                hit = row[4]
                break
        bits_to_threshold[label] = hit

    return {
        "labels": labels,
        "summaries": summaries,
        "gap_at_T": {lb: summaries[lb]["final_gap"] for lb in labels},
        "vs_first": vs_first,
        "bits_to_gap_threshold": {"threshold": threshold, "bits": bits_to_threshold},
        "mqv": mqv_study(cfgs[0]),
    }


EXPERIMENT_PRESETS = {
    "bilinear-abs": {
        "problem": {"preset": "bilinear"},
        "noise": {"kind": "absolute", "sigma": "0.1"},
        "run": {"T": "10000", "out": "bilinear-abs"},
    },
    "cocoercive-rel": {
        "problem": {"preset": "cocoercive"},
        "noise": {"kind": "relative", "sigma": "0.5"},
        "run": {"T": "10000", "out": "cocoercive-rel"},
    },
    "bilinear-alt": {
        "problem": {"preset": "bilinear"},
        "noise": {"kind": "relative", "sigma": "0.5", "clip": "10"},
        "schedule": {"kind": "alt", "q_hat": "0.25"},
        "run": {"T": "10000", "out": "bilinear-alt"},
    },
}


def _deep_merge(base, extra):
    out = copy.deepcopy(base)
    for sec, entries in (extra or {}).items():
        out.setdefault(sec, {}).update({k: str(v) for k, v in entries.items()})
    return out


def preset_config(name, overrides=None):
    """Resolve a named experiment preset, with optional section overrides."""
    if name not in EXPERIMENT_PRESETS:
        raise UnknownPreset(f"unknown experiment preset {name!r}; "
                            f"choices: {sorted(EXPERIMENT_PRESETS)}")
    return config_from_dict(_deep_merge(EXPERIMENT_PRESETS[name], overrides))


SUITES = ("rate-suite", "k-sweep", "halving")


def run_suite(name, seed=0, out="suite", overrides=None):
    """Run a named collection of presets and write a suite-level JSON."""
    os.makedirs(out, exist_ok=True)
    if name == "rate-suite":
        slopes = {}
        for preset in ("bilinear-abs", "cocoercive-rel"):
            cfg = preset_config(preset, overrides)
            cfg = replace(cfg, seed=seed, out=os.path.join(out, preset))
            slopes[preset] = run_experiment(cfg)["slope"]
        result = {"slopes": slopes}
    elif name == "k-sweep":
        cfgs, labels = [], []
        for K in (1, 4, 16):
            ov = _deep_merge({"problem": {"K": str(K)},
                              "noise": {"sigma": "0.5"},
                              "run": {"T": "2000"}}, overrides)
            cfg = preset_config("bilinear-abs", ov)
            cfgs.append(replace(cfg, seed=seed, out=os.path.join(out, f"K{K}")))
            labels.append(f"K={K}")
        result = compare(cfgs, labels)
    elif name == "halving":
        ov = _deep_merge({"quantization": {"update_period": "0"},
                          "run": {"T": "1000"}}, overrides)
        cfg = preset_config("bilinear-abs", ov)
        qoda = replace(cfg, seed=seed, out=os.path.join(out, "qoda"))
        eg = replace(cfg, seed=seed, algorithm="extragradient",
                     out=os.path.join(out, "extragradient"))
        result = compare([qoda, eg], ["qoda", "extragradient"])
    else:
        raise UnknownPreset(f"unknown suite {name!r}; choices: {sorted(SUITES)}")
    path = os.path.join(out, f"{name}.json")
    with open(path, "w") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result


def _load_run_arg(arg):
    if os.path.exists(arg):
        return load_config(arg)
    if arg in EXPERIMENT_PRESETS:
        return preset_config(arg)
    raise UnknownPreset(f"{arg!r} is neither a config file nor a preset; "
                        f"presets: {sorted(EXPERIMENT_PRESETS)}")


def _override_dict(pairs):
    """Parse ``section.key=value`` strings into a nested raw-config dict."""
    raw = {}
    for pair in pairs:
        target, eq, value = pair.partition("=")
        section, dot, key = target.partition(".")
        if not eq or not dot or not section or not key:
            raise ParseError(f"override must look like section.key=value, got {pair!r}")
        raw.setdefault(section, {})[key] = value
    return raw


def _apply_overrides(cfg, pairs):
    """Re-resolve a config with ``section.key=value`` strings laid on top."""
    if not pairs:
        return cfg
    raw = _config_to_dict(cfg)
    for section, kv in _override_dict(pairs).items():
        raw.setdefault(section, {}).update(kv)
    return config_from_dict(raw)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="quantvi",
        description="quantized VI solver experiments (CSV + JSON output)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one config file or preset")
    p_run.add_argument("config", help="path to an INI config, or a preset name")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="override a config key (repeatable)")

    p_cmp = sub.add_parser("compare", help="run several configs and diff them")
    p_cmp.add_argument("configs", nargs="+", help="two or more INI configs")
    p_cmp.add_argument("--seed", type=int, default=None)
    p_cmp.add_argument("--out", default="compare")
    p_cmp.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE",
                       help="override a config key in every compared config")

    p_suite = sub.add_parser("suite", help="run a named preset collection")
    p_suite.add_argument("name", help=f"one of {sorted(SUITES)}")
    p_suite.add_argument("--seed", type=int, default=0)
    p_suite.add_argument("--out", default="suite")
    p_suite.add_argument("--set", dest="overrides", action="append", default=[],
                         metavar="SECTION.KEY=VALUE",
                         help="override a config key in every suite run")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = _apply_overrides(_load_run_arg(args.config), args.overrides)
            if args.seed is not None:
                cfg = replace(cfg, seed=args.seed)
            if args.out is not None:
                cfg = replace(cfg, out=args.out)
            summary = run_experiment(cfg)
            print(json.dumps(summary, indent=2, sort_keys=True))
        elif args.command == "compare":
            cfgs = [_apply_overrides(load_config(p), args.overrides)
                    for p in args.configs]
            if args.seed is not None:
                cfgs = [replace(c, seed=args.seed) for c in cfgs]
            result = compare(cfgs)
            parent = os.path.dirname(args.out)
            if parent:
                os.makedirs(parent, exist_ok=True)
            with open(args.out + ".json", "w") as fh:
                json.dump(result, fh, indent=2, sort_keys=True)
                fh.write("\n")
            print(json.dumps(result, indent=2, sort_keys=True))
        else:
            result = run_suite(args.name, seed=args.seed, out=args.out,
                               overrides=_override_dict(args.overrides))
            print(json.dumps(result, indent=2, sort_keys=True))
    except Exception as exc:  # CLI boundary: report and exit nonzero
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
