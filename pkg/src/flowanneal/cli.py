"""Command-line entry points.

Four subcommands cover the full workflow:

* ``simulate``   write a synthetic dataset (noisy + noiseless files);
* ``nf-run``     adaptive annealed flow training against a target;
* ``mcmc-run``   annealed ensemble MCMC baseline on the same target;
* ``evidence``   evidence estimates from a finished run directory.

Configuration is an INI file with sections ``[target]``, ``[nf]``,
``[mcmc]``, ``[output]``; unknown sections or keys are rejected.  Every
run writes a ``manifest.ini`` echoing the fully resolved configuration
(plus per-stage records), and a manifest is itself a valid config: re-
running from it reproduces the outputs byte for byte.
"""

import argparse
import configparser
import os
import sys

import numpy as np

from . import __version__
from .annealer import AnnealConfig, anneal_run
from .errors import (ConfigError, FlowAnnealError, InputValidationError,
                     InsufficientLadderError, NonFiniteValueError,
                     ScheduleStallError, TrainingDivergedError)
from .evidence import (TiLadder, WeightedSampleSet, evidence_is, evidence_ti,
                       ti_ladder_from_checkpoints)
from .flow import FlowModel
from .mcmc import McmcConfig, run_annealed_ensemble
from .tables import format_float, parse_float_list, read_table, write_table
from .target import (DEFAULT_FILL_VALUE, DEFAULT_SIGMA2, Dataset,
                     OdePosterior, THETA_TRUE, generate_data)
from .toys import (ConjugateGaussianTarget, FlatLikelihoodTarget,
                   TrimodalGaussianTarget)

_TARGET_KINDS = ("repressilator", "conjugate_gaussian", "trimodal", "flat")

# (type, default); None defaults mean "required by the commands that use it"
_SCHEMA = {
    "target": {
        "kind": ("str", "repressilator"),
        "dataset": ("str", ""),
        "theta_true": ("vector", THETA_TRUE),
        "sigma2": ("float", DEFAULT_SIGMA2),
        "t_start": ("float", 0.0),
        "t_end": ("float", 30.0),
        "save_interval": ("float", 0.6),
        "sim_seed": ("int", 0),
        "ref_rtol": ("float", 1e-9),
        "ref_atol": ("float", 1e-11),
        "rtol": ("float", 1e-6),
        "atol": ("float", 1e-8),
        "max_steps": ("int", 1_000_000),
        "fill_value": ("float", DEFAULT_FILL_VALUE),
        "workers": ("int", 0),
        "like_mean": ("vector", np.array([1.0, 1.0])),
        "like_var": ("float", 1.0),
        "prior_std": ("float", 4.0),
        "mode_radius": ("float", 3.0),
        "mode_std": ("float", 0.35),
        "flat_dim": ("int", 2),
        "flat_prior_std": ("float", 1.0),
    },
    "nf": {
        "batch_size": ("int", 1024),
        "layers": ("int", 8),
        "update_steps": ("int", 50),
        "window_batches": ("int", 20),
        "train_minibatch": ("int", 0),
        "ess_threshold": ("float", 0.4),
        "ess_discount": ("float", 0.95),
        "ema_decay": ("float", 0.01),
        "learning_rate": ("float", 1e-4),
        "adam_beta1": ("float", 0.9),
        "adam_beta2": ("float", 0.99),
        "adam_eps": ("float", 1e-8),
        "grad_clip": ("float", 1e6),
        "scale_clamp": ("float", 8.0),
        "stall_patience": ("int", 200),
        "max_batches": ("int", 0),
        "seed": ("int", 0),
        "is_proposal": ("str", "mixture"),
        "is_samples": ("int", 0),
        "ti_samples": ("int", 0),
    },
    "mcmc": {
        "walkers": ("int", 16),
        "sweeps_per_stage": ("int", 1500),
        "stages": ("int", 1000),
        "schedule_exponent": ("float", 4.0),
        "stretch_scale": ("float", 2.0),
        "stretch_prob": ("float", 0.5),
        "de_scale": ("float", 0.0),
        "de_jitter_var": ("float", 1e-5),
        "thin": ("int", 1),
        "seed": ("int", 0),
    },
    "output": {
        "dir": ("str", ""),
    },
}


def _parse_value(kind, raw, where):
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "vector":
            return parse_float_list(raw)
        return raw
    except (ValueError, InputValidationError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def load_config(path):
    """Parse and validate an INI config (or manifest) file.

    Returns a fully defaulted ``{section: {key: value}}`` dict.  Manifest
    bookkeeping sections (``meta``, ``stage.*``) are preserved under a
    ``_meta``/``_stages`` key but otherwise ignored.
    """
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    resolved = {section: dict() for section in _SCHEMA}
    meta = {}
    for section in parser.sections():
        if section == "meta":
            meta = dict(parser.items(section))
            continue
        if section.startswith("stage."):
            continue
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        schema = _SCHEMA[section]
        for key, raw in parser.items(section):
            if key not in schema:
                raise ConfigError(
                    f"{path}: unknown key '{key}' in [{section}]")
            resolved[section][key] = _parse_value(
                schema[key][0], raw, f"{path} [{section}] {key}")
    for section, schema in _SCHEMA.items():
        for key, (_, default) in schema.items():
            resolved[section].setdefault(key, default)

    kind = resolved["target"]["kind"]
    if kind not in _TARGET_KINDS:
        raise ConfigError(
            f"{path}: target kind must be one of {_TARGET_KINDS}, "
            f"got '{kind}'")
    if resolved["nf"]["is_proposal"] not in ("mixture", "flow"):
        raise ConfigError(f"{path}: is_proposal must be 'mixture' or 'flow'")
    resolved["_meta"] = meta
    return resolved


def _format_config_value(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return ",".join(format_float(v) for v in value)
    raise ValueError(f"cannot format {value!r}")


def write_manifest(path, command, config, sections, stages=None,
                   completed=True):
    """Echo the resolved config plus per-stage records.

    The result is both the run's record and a valid config file.
    """
    lines = ["[meta]",
             "tool = flowanneal",
             f"version = {__version__}",
             f"command = {command}",
             f"completed = {'true' if completed else 'false'}",
             ""]
    for section in sections:
        lines.append(f"[{section}]")
        for key, value in config[section].items():
            lines.append(f"{key} = {_format_config_value(value)}")
        lines.append("")
    for record in stages or []:
        lines.append(f"[stage.{record['index']}]")
        for key, value in record.items():
            if key != "index":
                lines.append(f"{key} = {_format_config_value(value)}")
        lines.append("")
    with open(path, "w") as fh:
        fh.write("\n".join(lines))


def build_target(tcfg, dataset_required=False):
    kind = tcfg["kind"]
    if kind == "repressilator":
        if not tcfg["dataset"]:
            raise ConfigError("[target] dataset path is required for the "
                              "repressilator target")
        if not os.path.exists(tcfg["dataset"]):
            raise ConfigError(f"dataset file not found: {tcfg['dataset']}")
        dataset = Dataset.load(tcfg["dataset"])
        return OdePosterior(dataset, rtol=tcfg["rtol"], atol=tcfg["atol"],
                            max_steps=tcfg["max_steps"],
                            fill_value=tcfg["fill_value"],
                            workers=tcfg["workers"])
    if dataset_required:
        raise ConfigError(f"target kind '{kind}' has no dataset")
    if kind == "conjugate_gaussian":
        return ConjugateGaussianTarget(tcfg["like_mean"], tcfg["like_var"])
    if kind == "trimodal":
        return TrimodalGaussianTarget(tcfg["prior_std"],
                                      tcfg["mode_radius"], tcfg["mode_std"])
    return FlatLikelihoodTarget(tcfg["flat_dim"], tcfg["flat_prior_std"])


def _require_output_dir(config):
    out = config["output"]["dir"]
    if not out:
        raise ConfigError("[output] dir is required")
    os.makedirs(out, exist_ok=True)
    return out


def _noiseless_path(dataset_path):
    stem, ext = os.path.splitext(dataset_path)
    return f"{stem}_noiseless{ext or '.csv'}"


def cmd_simulate(config):
    tcfg = config["target"]
    if tcfg["kind"] != "repressilator":
        raise ConfigError("simulate only supports the repressilator target")
    if not tcfg["dataset"]:
        raise ConfigError("[target] dataset output path is required")
    out_dir = _require_output_dir(config)
    noisy, noiseless = generate_data(
        tcfg["theta_true"], tcfg["sigma2"], tcfg["sim_seed"],
        tcfg["t_start"], tcfg["t_end"], tcfg["save_interval"],
        tcfg["ref_rtol"], tcfg["ref_atol"])
    dataset_dir = os.path.dirname(tcfg["dataset"])
    if dataset_dir:
        os.makedirs(dataset_dir, exist_ok=True)
    noisy.save(tcfg["dataset"])
    noiseless.save(_noiseless_path(tcfg["dataset"]))
    write_manifest(os.path.join(out_dir, "manifest.ini"), "simulate",
                   config, ["target", "output"])
    print(f"wrote dataset ({noisy.times.size} points, sigma2="
          f"{format_float(noisy.sigma2)}) to {tcfg['dataset']}")
    print(f"wrote noiseless series to {_noiseless_path(tcfg['dataset'])}")
    return 0


def _anneal_config_from(nfcfg):
    return AnnealConfig(
        batch_size=nfcfg["batch_size"], layers=nfcfg["layers"],
        update_steps=nfcfg["update_steps"],
        window_batches=nfcfg["window_batches"],
        train_minibatch=nfcfg["train_minibatch"],
        ess_threshold=nfcfg["ess_threshold"],
        ess_discount=nfcfg["ess_discount"], ema_decay=nfcfg["ema_decay"],
        learning_rate=nfcfg["learning_rate"],
        adam_beta1=nfcfg["adam_beta1"], adam_beta2=nfcfg["adam_beta2"],
        adam_eps=nfcfg["adam_eps"], grad_clip=nfcfg["grad_clip"],
        scale_clamp=nfcfg["scale_clamp"],
        stall_patience=nfcfg["stall_patience"],
        max_batches=nfcfg["max_batches"], seed=nfcfg["seed"])


def _write_nf_outputs(out_dir, config, result, completed):
    history = result.history
    write_table(
        os.path.join(out_dir, "schedule.csv"),
        ["batch", "beta", "n_eff", "n_eff_ema", "cum_lik_evals"],
        [np.array([r.index for r in history], dtype=int),
         np.array([r.beta for r in history]),
         np.array([r.n_eff for r in history]),
         np.array([r.n_eff_ema for r in history]),
         np.array([r.cum_lik_evals for r in history], dtype=int)],
        metadata={"completed": completed,
                  "n_lik_evals": result.n_lik_evals})

    archive = result.archive
    if archive.n_batches > 0:
        thetas = archive.samples()
        dim = thetas.shape[1]
        model_ids = archive.model_ids
        columns = (["batch", "model"]
                   + [f"theta_{i}" for i in range(dim)]
                   + ["log_prior", "log_lik", "log_q_mix"]
                   + [f"log_q_m{mid}" for mid in model_ids])
        log_q_matrix = archive.log_q_matrix()
        arrays = ([archive.batch_indices(),
                   archive.model_index_per_sample()]
                  + [thetas[:, i] for i in range(dim)]
                  + [archive.log_pb(), archive.log_pu(),
                     archive.mixture_log_density()]
                  + [log_q_matrix[:, j] for j in range(len(model_ids))])
        final_beta = result.stages[-1].beta if result.stages else 0.0
        write_table(os.path.join(out_dir, "archive.csv"), columns, arrays,
                    metadata={"final_beta": final_beta,
                              "model_ids": [float(m) for m in model_ids]})

    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    stage_records = []
    for i, ((beta, model), stage) in enumerate(
            zip(result.checkpoints, result.stages)):
        rel = os.path.join("checkpoints", f"ckpt_{i:04d}.npz")
        model.save(os.path.join(out_dir, rel))
        stage_records.append({
            "index": i, "beta": beta, "n_eff": stage.n_eff,
            "n_eff_ema": stage.n_eff_ema, "batches": stage.batches,
            "cum_lik_evals": stage.cum_lik_evals, "checkpoint": rel,
        })
    write_manifest(os.path.join(out_dir, "manifest.ini"), "nf-run", config,
                   ["target", "nf", "output"], stage_records, completed)


def cmd_nf_run(config):
    out_dir = _require_output_dir(config)
    target = build_target(config["target"])
    anneal_config = _anneal_config_from(config["nf"])
    code = 0
    try:
        result = anneal_run(target, anneal_config)
        completed = True
    except ScheduleStallError as exc:
        if exc.result is None:
            raise
        print(f"error: {exc}", file=sys.stderr)
        result = exc.result
        completed = False
        code = 2
    finally:
        if hasattr(target, "close"):
            target.close()
    _write_nf_outputs(out_dir, config, result, completed)
    last = result.history[-1] if result.history else None
    status = "completed" if completed else "stalled"
    print(f"{status}: {len(result.history)} batches, "
          f"{len(result.stages)} temperatures, final beta="
          f"{format_float(last.beta) if last else 'nan'}, likelihood "
          f"evaluations={result.n_lik_evals}")
    print(f"outputs in {out_dir}")
    return code


def cmd_mcmc_run(config):
    out_dir = _require_output_dir(config)
    target = build_target(config["target"])
    mcmc_config = McmcConfig(**config["mcmc"])
    try:
        result = run_annealed_ensemble(target, mcmc_config)
    finally:
        if hasattr(target, "close"):
            target.close()

    chain = result.chain
    write_table(os.path.join(out_dir, "chains.csv"), result.chain_columns,
                [chain[:, j] for j in range(chain.shape[1])],
                metadata={"thin": mcmc_config.thin,
                          "walkers": mcmc_config.walkers,
                          "stored_per_stage": result.stored_per_stage})

    stages = np.arange(1, mcmc_config.stages + 1)
    diag_meta = {"n_lik_evals": result.n_lik_evals,
                 "stored_per_stage": result.stored_per_stage}
    for p, value in enumerate(result.ess_per_param):
        diag_meta[f"ess_theta_{p}"] = value
    write_table(os.path.join(out_dir, "diagnostics.csv"),
                ["stage", "beta", "acceptance_rate", "stored_samples"],
                [stages, result.ladder.betas[1:], result.acceptance,
                 np.full(stages.size, result.stored_per_stage, dtype=int)],
                metadata=diag_meta)

    write_table(os.path.join(out_dir, "ladder.csv"),
                ["beta", "integrand", "count"],
                [result.ladder.betas, result.ladder.integrands,
                 result.ladder.counts.astype(int)])

    write_manifest(os.path.join(out_dir, "manifest.ini"), "mcmc-run",
                   config, ["target", "mcmc", "output"])
    print(f"completed: {mcmc_config.stages} stages, final acceptance "
          f"rate={format_float(result.acceptance[-1])}, likelihood "
          f"evaluations={result.n_lik_evals}")
    print(f"outputs in {out_dir}")
    return 0


def _load_nf_checkpoints(run_dir, manifest_path):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(manifest_path) as fh:
        parser.read_file(fh)
    records = []
    for section in parser.sections():
        if not section.startswith("stage."):
            continue
        idx = int(section.split(".", 1)[1])
        records.append((idx, float(parser[section]["beta"]),
                        parser[section]["checkpoint"]))
    records.sort()
    checkpoints = []
    for _, beta, rel in records:
        path = os.path.join(run_dir, rel)
        if not os.path.exists(path):
            raise ConfigError(f"checkpoint file not found: {path}")
        checkpoints.append((beta, FlowModel.load(path)))
    if not checkpoints:
        raise ConfigError(f"no stage records in {manifest_path}")
    return checkpoints


def cmd_evidence(run_dir, method):
    manifest_path = os.path.join(run_dir, "manifest.ini")
    if not os.path.exists(manifest_path):
        raise ConfigError(f"manifest not found: {manifest_path}")
    config = load_config(manifest_path)
    command = config["_meta"].get("command", "")
    if command not in ("nf-run", "mcmc-run"):
        raise ConfigError(
            f"{manifest_path}: not a sampling run (command={command!r})")

    report = {"run": run_dir, "method": method, "source": command}
    lines = []
    target = None
    try:
        if command == "nf-run":
            target = build_target(config["target"])
            nfcfg = config["nf"]
            default_n = 10 * nfcfg["batch_size"]
            if method in ("is", "both"):
                proposal = nfcfg["is_proposal"]
                report["is_proposal"] = proposal
                if proposal == "mixture":
                    sample_set = _mixture_sample_set(run_dir)
                else:
                    sample_set = _flow_sample_set(
                        run_dir, manifest_path, target,
                        nfcfg["is_samples"] or default_n, nfcfg["seed"])
                raw = evidence_is(sample_set, prune=False)
                pruned = evidence_is(sample_set, prune=True)
                report["log_evidence_is"] = raw.log_evidence
                report["log_evidence_is_pruned"] = pruned.log_evidence
                report["is_n_samples"] = raw.diagnostics["n_samples"]
                report["is_ess"] = raw.diagnostics["ess"]
                report["is_ess_pruned"] = pruned.diagnostics["ess_pruned"]
                report["is_n_pruned"] = pruned.diagnostics["n_pruned"]
            if method in ("ti", "both"):
                checkpoints = _load_nf_checkpoints(run_dir, manifest_path)
                ladder = ti_ladder_from_checkpoints(
                    checkpoints, target,
                    nfcfg["ti_samples"] or default_n,
                    seed=np.random.SeedSequence([nfcfg["seed"], 2]))
                estimate = evidence_ti(ladder)
                _write_ti_table(run_dir, ladder, estimate)
                report["log_evidence_ti"] = estimate.log_evidence
                report["ti_points"] = estimate.diagnostics["n_points"]
                report["ti_excluded"] = estimate.diagnostics["n_excluded"]
                report["ti_beta_min_used"] = \
                    estimate.diagnostics["beta_min_used"]
        else:
            if method in ("is", "both"):
                if method == "is":
                    raise ConfigError(
                        "importance-sampling evidence needs an nf-run "
                        "directory (no proposal density in an MCMC run)")
                report["is_skipped"] = \
                    "no proposal density in an MCMC run"
            ladder_path = os.path.join(run_dir, "ladder.csv")
            if not os.path.exists(ladder_path):
                raise ConfigError(f"ladder file not found: {ladder_path}")
            _, cols = read_table(ladder_path,
                                 ["beta", "integrand", "count"])
            ladder = TiLadder(cols["beta"], cols["integrand"],
                              cols["count"])
            estimate = evidence_ti(ladder)
            _write_ti_table(run_dir, ladder, estimate)
            report["log_evidence_ti"] = estimate.log_evidence
            report["ti_points"] = estimate.diagnostics["n_points"]
            report["ti_excluded"] = estimate.diagnostics["n_excluded"]
            report["ti_beta_min_used"] = \
                estimate.diagnostics["beta_min_used"]
    finally:
        if target is not None and hasattr(target, "close"):
            target.close()

    for key, value in report.items():
        lines.append(f"{key} = {_format_config_value(value)}")
    text = "\n".join(lines) + "\n"
    with open(os.path.join(run_dir, "evidence_report.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")
    return 0


def _mixture_sample_set(run_dir):
    archive_path = os.path.join(run_dir, "archive.csv")
    if not os.path.exists(archive_path):
        raise ConfigError(f"archive file not found: {archive_path}")
    _, cols = read_table(archive_path)
    for needed in ("log_prior", "log_lik", "log_q_mix"):
        if needed not in cols:
            raise ConfigError(
                f"{archive_path}: missing column {needed}")
    theta_cols = sorted(c for c in cols if c.startswith("theta_"))
    samples = np.column_stack([cols[c] for c in theta_cols])
    return WeightedSampleSet(samples,
                             cols["log_prior"] + cols["log_lik"],
                             cols["log_q_mix"])


def _flow_sample_set(run_dir, manifest_path, target, n, seed):
    checkpoints = _load_nf_checkpoints(run_dir, manifest_path)
    beta, model = checkpoints[-1]
    if abs(beta - 1.0) > 1e-9:
        raise ConfigError(
            f"final checkpoint is at beta={beta:g}, not 1; cannot use the "
            f"flow as the evidence proposal")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    samples, log_q = model.sample(n, rng)
    log_pb, log_pu = target.log_components(samples)
    return WeightedSampleSet(samples, log_pb + log_pu, log_q)


def _write_ti_table(run_dir, ladder, estimate):
    cutoff = estimate.diagnostics["cutoff"]
    used = (np.isfinite(ladder.integrands)
            & (ladder.integrands >= cutoff)).astype(int)
    write_table(os.path.join(run_dir, "ti_integrand.csv"),
                ["beta", "integrand", "count", "used"],
                [ladder.betas, ladder.integrands,
                 np.asarray(ladder.counts, dtype=int), used],
                metadata={"log_evidence_ti": estimate.log_evidence,
                          "cutoff": cutoff})


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="flowanneal",
        description="Annealed normalizing-flow sampling and evidence "
                    "estimation for Bayesian ODE parameter inference.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    p_sim.add_argument("--config", required=True)

    p_nf = sub.add_parser("nf-run", help="adaptive annealed flow training")
    p_nf.add_argument("--config", required=True)

    p_mc = sub.add_parser("mcmc-run", help="annealed ensemble MCMC baseline")
    p_mc.add_argument("--config", required=True)

    p_ev = sub.add_parser("evidence",
                          help="evidence estimates from a run directory")
    p_ev.add_argument("--run", required=True)
    p_ev.add_argument("--method", choices=("is", "ti", "both"),
                      default="both")

    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            return cmd_simulate(load_config(args.config))
        if args.command == "nf-run":
            return cmd_nf_run(load_config(args.config))
        if args.command == "mcmc-run":
            return cmd_mcmc_run(load_config(args.config))
        return cmd_evidence(args.run, args.method)
    except (ConfigError, InputValidationError,
            InsufficientLadderError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ScheduleStallError, TrainingDivergedError, NonFiniteValueError,
            FlowAnnealError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
