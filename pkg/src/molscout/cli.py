"""Headless driver for every workflow stage.

Exit codes: 0 ok, 1 validation problem (bad input, unknown flags), 2 runtime
fault, 3 numerical failure. Machine-readable output goes to stdout
(``--format csv|json-lines``); every diagnostic goes to stderr. A state file is
guarded by an advisory lock shared with ``serve`` so the CLI never mutates a
campaign concurrently with a running service.
"""

from __future__ import annotations

import copy
import json
import sys
from io import StringIO
from pathlib import Path

import click
import filelock

from . import __version__
from .acquire import AcquisitionConfig, write_shortlist_csv
from .campaign import (
    CampaignConfig,
    CampaignSession,
    CampaignStore,
    retrain_and_shortlist,
    state_hash,
    training_molecule_ids,
)
from .domain import (
    ingest_benchmark,
    ingest_molecules,
    ingest_results,
    ingest_soft_samples,
    training_targets,
)
from .errors import (
    BusyError,
    MissingProfileError,
    MolscoutError,
    NumericalFailureError,
    TransportError,
    ValidationError,
)
from .featurize import aggregate_soft, assemble, write_features_csv
from .oracle import OracleConfig
from .stats import (
    benchmark_report,
    loo_evaluate,
    loo_report_cis,
    policy_ablation,
    representation_ablation,
    trap_density,
    welch_t,
    wilson_interval,
)
from .surrogate import FitConfig, fit

_FORMATS = ("csv", "json-lines")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit(rows: list[dict], fmt: str, out: str | None = None) -> None:
    """Write rows as CSV (header from the first row) or JSON lines."""
    if not rows:
        text = ""
    elif fmt == "json-lines":
        text = "\n".join(json.dumps(row, sort_keys=True) for row in rows) + "\n"
    else:
        buf = StringIO()
        fields = list(rows[0])
        buf.write(",".join(fields) + "\n")
        for row in rows:
            buf.write(",".join(_cell(row.get(f)) for f in fields) + "\n")
        text = buf.getvalue()
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _info(message: str) -> None:
    print(message, file=sys.stderr)


def _state_lock(state_path: str) -> filelock.FileLock:
    return filelock.FileLock(str(state_path) + ".lock")


def _load_session(state_path: str) -> CampaignSession:
    return CampaignSession.open(CampaignStore(state_path))


def _load_soft_profiles(path: str) -> dict:
    samples = ingest_soft_samples(path)
    grouped: dict[str, list] = {}
    for s in samples:
        grouped.setdefault(s.molecule_id, []).append(s)
    return {mol: aggregate_soft(ss) for mol, ss in grouped.items()}


def _read_id_list(path: str) -> list[str]:
    ids = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            ids.append(line)
    return ids


def _dataset(molecules: str, results: str, soft: str | None):
    library = ingest_molecules(molecules)
    res = ingest_results(results)
    profiles = _load_soft_profiles(soft) if soft else {}
    return library, res, profiles


fmt_option = click.option("--format", "fmt", type=click.Choice(_FORMATS), default="csv", show_default=True)
out_option = click.option("--out", default=None, help="Write output to a file instead of stdout.")
state_option = click.option("--state", required=True, help="Path to the campaign state file.")


@click.group()
@click.version_option(version=__version__, prog_name="molscout")
def cli() -> None:
    """Closed-loop molecular candidate prioritization."""


@cli.command()
@click.option("--molecules", required=True, help="molecules.csv: id,smiles,name,hf_*")
@click.option("--results", "results_path", required=True, help="results.csv with round-0 hot-start rows")
@click.option("--soft", default=None, help="soft_samples.csv to pre-seed profiles")
@click.option("--template-version", default="v1", show_default=True)
@state_option
@click.option("--oracle-config", default=None, help="oracle.toml-style key=value file")
@click.option("--mode", default="hybrid", show_default=True, type=click.Choice(("hard", "mech_soft", "full_soft", "hybrid")))
@click.option("--shortlist-size", default=50, show_default=True)
@click.option("--xi", default=0.05, show_default=True)
@click.option("--policy", default="ei", show_default=True, type=click.Choice(("ei", "mean", "uncertainty", "random")))
@click.option("--campaign-id", default=None)
@click.option("--seed", default=0, show_default=True)
@fmt_option
def ingest(molecules, results_path, soft, template_version, state, oracle_config, mode,
           shortlist_size, xi, policy, campaign_id, seed, fmt):
    """Create a campaign from a molecule library and hot-start results."""
    library = ingest_molecules(molecules)
    hot = ingest_results(results_path)
    oracle_cfg = OracleConfig.from_file(oracle_config) if oracle_config else OracleConfig(seed=seed)
    config = CampaignConfig(
        oracle=oracle_cfg,
        acquisition=AcquisitionConfig(policy=policy, xi=xi, shortlist_size=shortlist_size),
        fit=FitConfig(seed=seed),
        representation_mode=mode,
    )
    with _state_lock(state):
        session = CampaignSession.create(
            CampaignStore(state), library, hot, config, campaign_id=campaign_id, rng_seed=seed
        )
        if soft:
            session.set_profiles(template_version, _load_soft_profiles(soft))
    emit(
        [{
            "campaign_id": session.state.campaign_id,
            "molecules": len(library),
            "results": len(hot),
            "version": session.state.version,
        }],
        fmt,
    )


@cli.command("open-round")
@state_option
@click.option("--pool", default=None, help="File of molecule ids (one per line); default: all unmeasured molecules.")
@click.option("--prioritized", default=None, help="Optional feasibility-masked subset file.")
@click.option("--template-version", required=True)
@click.option("--template-file", default=None, help="Prompt template text for this version.")
@fmt_option
def open_round_cmd(state, pool, prioritized, template_version, template_file, fmt):
    """Open the next review round over a pool snapshot."""
    with _state_lock(state).acquire(timeout=2):
        session = _load_session(state)
        if pool:
            pool_ids = _read_id_list(pool)
        else:
            measured = set(training_molecule_ids(session.state))
            pool_ids = [m for m in session.state.library.ids() if m not in measured]
        template_text = Path(template_file).read_text(encoding="utf-8") if template_file else None
        prioritized_ids = _read_id_list(prioritized) if prioritized else None
        session.open_round(pool_ids, template_version, template_text, prioritized_ids)
    rnd = session.state.current_round
    emit([{"round": rnd.index, "pool": len(rnd.pool_ids), "status": rnd.status, "version": session.state.version}], fmt)


@cli.command()
@state_option
@fmt_option
def profile(state, fmt):
    """Generate missing soft profiles for the open round via the oracle."""
    with _state_lock(state).acquire(timeout=2):
        session = _load_session(state)
        generated = session.ensure_profiles()
    rnd = session.state.current_round
    emit([{
        "round": rnd.index,
        "template_version": rnd.template_version,
        "profiles_generated": generated,
        "version": session.state.version,
    }], fmt)


def _fit_on_state(session, template_version=None):
    state = session.state
    mode = state.config.representation_mode
    train_ids = training_molecule_ids(state)
    if template_version is None:
        if state.current_round is not None:
            template_version = state.current_round.template_version
        elif state.templates:
            template_version = sorted(state.templates)[-1]
        else:
            template_version = "v1"
    profiles = state.profiles.get(template_version, {})
    if mode != "hard":
        missing = [m for m in train_ids if m not in profiles]
        if missing:
            raise MissingProfileError(
                f"profiles missing for {len(missing)} training molecules under {template_version!r}; run profile"
            )
    targets = training_targets(state.results)
    mols = [state.library.get(m) for m in train_ids]
    fm = assemble(mols, profiles, mode, training_ids=train_ids)
    import numpy as np

    gp = fit(fm.rows(train_ids), np.array([targets[m] for m in train_ids]), state.config.fit)
    return fm, gp


@cli.command("fit")
@state_option
@click.option("--template-version", default=None)
@click.option("--features-out", default=None, help="Also export the standardized feature table.")
@fmt_option
def fit_cmd(state, template_version, features_out, fmt):
    """Fit the surrogate on the measured molecules and report hyperparameters."""
    session = _load_session(state)
    fm, gp = _fit_on_state(session, template_version)
    if features_out:
        write_features_csv(fm, features_out)
    emit([{
        "n_training": gp.n,
        "n_features": len(fm.feature_names),
        "signal_variance": gp.params.signal_variance,
        "length_scale": gp.params.length_scale,
        "noise_variance": gp.params.noise_variance,
        "log_marginal_likelihood": gp.log_marginal_likelihood,
        "dropped_constant": ";".join(fm.dropped_constant),
    }], fmt)


def _scored_rows(scored):
    return [
        {
            "rank": c.rank,
            "molecule_id": c.molecule_id,
            "mu": c.mu,
            "sigma": c.sigma,
            "ei": c.ei,
            "feasible": c.feasible,
        }
        for c in sorted(scored, key=lambda c: c.rank)
    ]


@cli.command()
@state_option
@click.option("--limit", default=0, help="Print only the first N ranks (0 = all).")
@fmt_option
@out_option
def score(state, limit, fmt, out):
    """Score the open round's pool (read-only; does not persist)."""
    session = _load_session(state)
    rnd = session.state.current_round
    if rnd is not None and rnd.scored:
        scored = rnd.scored
    else:
        scratch = copy.deepcopy(session.state)
        retrain_and_shortlist(scratch)
        scored = scratch.current_round.scored
    rows = _scored_rows(scored)
    if limit:
        rows = rows[:limit]
    emit(rows, fmt, out)


@cli.command("shortlist")
@state_option
@click.option("--round", "round_index", default=0, help="Round index (0 = current).")
@fmt_option
@out_option
def shortlist_cmd(state, round_index, fmt, out):
    """Print the persisted shortlist of a scored round."""
    session = _load_session(state)
    idx = round_index or (session.state.current_round.index if session.state.current_round else 0)
    if idx == 0:
        raise ValidationError("no rounds exist yet")
    short = session.state.current_shortlist(idx)
    if not short:
        raise ValidationError(f"round {idx} is not scored yet; run retrain")
    if out and fmt == "csv":
        write_shortlist_csv(short, out)
    else:
        emit(_scored_rows(short), fmt, out)


@cli.command()
@state_option
@click.option("--molecule", required=True)
@click.option("--feasible", required=True, type=click.Choice(("true", "false")))
@click.option("--note", default="")
@fmt_option
def review(state, molecule, feasible, note, fmt):
    """Set an expert feasibility flag on a candidate."""
    with _state_lock(state).acquire(timeout=2):
        session = _load_session(state)
        session.set_feasibility(molecule, feasible == "true", note)
    emit([{"molecule_id": molecule, "feasible": feasible == "true", "version": session.state.version}], fmt)


@cli.command()
@state_option
@click.option("--molecule", required=True)
@click.option("--round", "round_index", required=True, type=int)
@click.option("--pce-additive", required=True, type=float)
@click.option("--pce-control", required=True, type=float)
@fmt_option
def record(state, molecule, round_index, pce_additive, pce_control, fmt):
    """Record one measured device result."""
    from .domain import ExperimentResult

    with _state_lock(state).acquire(timeout=2):
        session = _load_session(state)
        result = ExperimentResult.from_pce(molecule, round_index, pce_additive, pce_control)
        session.record_result(result)
    emit([{
        "molecule_id": molecule,
        "round": round_index,
        "delta_rel": result.delta_rel,
        "version": session.state.version,
    }], fmt)


@cli.command()
@state_option
@fmt_option
def retrain(state, fmt):
    """Refit the surrogate, rescore the open round, persist the shortlist."""
    with _state_lock(state).acquire(timeout=2):
        session = _load_session(state)
        session.retrain()
    emit(_scored_rows(session.state.current_shortlist()), fmt)


@cli.command("close-round")
@state_option
@click.option("--tested", default="", help="Comma-separated tested molecule ids (besides recorded results).")
@fmt_option
def close_round_cmd(state, tested, fmt):
    """Freeze the awaiting round; molecules with recorded results count as tested."""
    with _state_lock(state).acquire(timeout=2):
        session = _load_session(state)
        tested_ids = [t for t in tested.split(",") if t]
        session.close_round(tested_ids)
    rnd = session.state.current_round
    emit([{"round": rnd.index, "tested": len(rnd.tested), "status": rnd.status, "version": session.state.version}], fmt)


@cli.command("verify-log")
@state_option
@fmt_option
def verify_log(state, fmt):
    """Replay the mutation log and compare against the stored state."""
    store = CampaignStore(state)
    stored = store.load()
    replayed = store.replay()
    ok = state_hash(replayed) == state_hash(stored)
    emit([{"state_hash": state_hash(stored), "replay_matches": ok}], fmt)
    if not ok:
        raise MolscoutError("mutation-log replay does not reproduce the stored state")


def _loo_rows(mode_reports, cis_by_mode):
    rows = []
    for mode, rep in mode_reports.items():
        row = {
            "representation_mode": mode,
            "n": len(rep.molecule_ids),
            "spearman": rep.spearman,
            "topk_overlap": rep.topk_overlap,
            "rmse": rep.rmse,
            "rmse_improvement_vs_hard": rep.rmse_improvement_vs_hard,
            "fraction": rep.fraction,
        }
        cis = cis_by_mode.get(mode)
        if cis:
            for name, res in cis.items():
                row[f"{name}_ci_lo"] = res.lo
                row[f"{name}_ci_hi"] = res.hi
                row[f"{name}_ci_flagged"] = res.flagged
        rows.append(row)
    return rows


@cli.command()
@click.option("--molecules", required=True)
@click.option("--results", "results_path", required=True)
@click.option("--soft", default=None)
@click.option("--mode", default="hybrid", show_default=True, type=click.Choice(("hard", "mech_soft", "full_soft", "hybrid")))
@click.option("--fraction", default=0.2, show_default=True)
@click.option("--bootstrap", default=0, show_default=True, help="Bootstrap replicates for CIs (0 = skip).")
@click.option("--seed", default=0, show_default=True)
@fmt_option
@out_option
def loo(molecules, results_path, soft, mode, fraction, bootstrap, seed, fmt, out):
    """Leave-one-out evaluation of one representation mode."""
    library, results, profiles = _dataset(molecules, results_path, soft)
    rep = loo_evaluate(library, profiles, results, mode, FitConfig(seed=seed), fraction)
    cis = {}
    if bootstrap:
        hard_rep = None
        if mode != "hard":
            hard_rep = loo_evaluate(
                library, profiles, results, "hard", FitConfig(seed=seed), fraction, compute_hard_baseline=False
            )
        cis[mode] = loo_report_cis(rep, hard_rep, B=bootstrap, seed=seed)
    emit(_loo_rows({mode: rep}, cis), fmt, out)


@cli.command("ablate-representation")
@click.option("--molecules", required=True)
@click.option("--results", "results_path", required=True)
@click.option("--soft", required=True)
@click.option("--fraction", default=0.2, show_default=True)
@click.option("--bootstrap", default=0, show_default=True)
@click.option("--seed", default=0, show_default=True)
@fmt_option
@out_option
def ablate_representation(molecules, results_path, soft, fraction, bootstrap, seed, fmt, out):
    """Run all four representation modes with shared folds and seed."""
    library, results, profiles = _dataset(molecules, results_path, soft)
    reports = representation_ablation(library, profiles, results, FitConfig(seed=seed), fraction=fraction)
    cis = {}
    if bootstrap:
        for mode, rep in reports.items():
            hard_rep = reports["hard"] if mode != "hard" else None
            cis[mode] = loo_report_cis(rep, hard_rep, B=bootstrap, seed=seed)
    emit(_loo_rows(reports, cis), fmt, out)


@cli.command("ablate-policy")
@click.option("--molecules", required=True)
@click.option("--results", "results_path", required=True)
@click.option("--soft", default=None)
@click.option("--pool", default=None, help="File of pool ids; default: all unmeasured molecules.")
@click.option("--mode", default="hybrid", show_default=True, type=click.Choice(("hard", "mech_soft", "full_soft", "hybrid")))
@click.option("--k", default=50, show_default=True)
@click.option("--replicates", default=20, show_default=True)
@click.option("--xi", default=0.05, show_default=True)
@click.option("--seed", default=0, show_default=True)
@fmt_option
@out_option
def ablate_policy(molecules, results_path, soft, pool, mode, k, replicates, xi, seed, fmt, out):
    """Compare EI / mean / uncertainty / random shortlists on one pool."""
    import numpy as np

    library, results, profiles = _dataset(molecules, results_path, soft)
    targets = training_targets(results)
    train_ids = [m for m in library.ids() if m in targets]
    pool_ids = _read_id_list(pool) if pool else [m for m in library.ids() if m not in targets]
    matrix_ids = list(dict.fromkeys(train_ids + pool_ids))
    fm = assemble([library.get(m) for m in matrix_ids], profiles, mode, training_ids=train_ids)
    gp = fit(fm.rows(train_ids), np.array([targets[m] for m in train_ids]), FitConfig(seed=seed))
    report = policy_ablation(
        gp, fm, pool_ids, k=k, random_replicates=replicates, seed=seed,
        base_cfg=AcquisitionConfig(xi=xi),
    )
    rows = []
    for p in report.policies:
        rows.append({
            "policy": p.policy,
            "k": report.k,
            "mean_mu": p.mean_mu,
            "mean_sigma": p.mean_sigma,
            "mean_ei": p.mean_ei,
            "overlap_with_ei": p.overlap_with_ei,
            "std_mu": p.std_mu,
            "std_sigma": p.std_sigma,
            "std_ei": p.std_ei,
            "std_overlap": p.std_overlap,
        })
    emit(rows, fmt, out)


@cli.command("bench-stats")
@click.option("--benchmark", default=None, help="benchmark.csv with question_id + 0/1 model columns.")
@click.option("--k", default=None, type=int, help="Correct count for a single Wilson interval.")
@click.option("--n", default=None, type=int, help="Total count for a single Wilson interval.")
@click.option("--reference", default=None, help="Reference model for pairwise tests.")
@click.option("--conf", default=0.95, show_default=True)
@fmt_option
@out_option
def bench_stats(benchmark, k, n, reference, conf, fmt, out):
    """Wilson intervals and exact McNemar + Holm tests on a benchmark sheet."""
    if k is not None and n is not None:
        lo, hi = wilson_interval(k, n, conf)
        print(f"{k / n:.3f} ({lo:.3f}, {hi:.3f})")
        return
    if not benchmark:
        raise ValidationError("provide either --benchmark or both --k and --n")
    sheet = ingest_benchmark(benchmark)
    rows = [
        {
            "model": r.model,
            "correct": r.correct,
            "total": r.total,
            "accuracy": r.accuracy,
            "wilson_lo": r.wilson_lo,
            "wilson_hi": r.wilson_hi,
            "b": r.b,
            "c": r.c,
            "p_raw": r.p_raw,
            "p_adjusted": r.p_adjusted,
        }
        for r in benchmark_report(sheet, reference, conf)
    ]
    emit(rows, fmt, out)


@cli.command()
@click.option("--m1", required=True, type=float)
@click.option("--s1", required=True, type=float)
@click.option("--n1", required=True, type=int)
@click.option("--m2", required=True, type=float)
@click.option("--s2", required=True, type=float)
@click.option("--n2", required=True, type=int)
@click.option("--conf", default=0.95, show_default=True)
@fmt_option
def welch(m1, s1, n1, m2, s2, n2, conf, fmt):
    """Two-sided Welch's t-test from group summary statistics."""
    res = welch_t(m1, s1, n1, m2, s2, n2, conf)
    emit([{
        "estimate": res.estimate,
        "statistic": res.statistic,
        "df": res.df,
        "p_value": res.p_value,
        "ci_lo": res.ci[0],
        "ci_hi": res.ci[1],
    }], fmt)


@cli.command()
@click.option("--eps", required=True, type=float, help="Relative permittivity.")
@click.option("--vtfl", required=True, type=float, help="Trap-filled-limit voltage (V).")
@click.option("--thickness", required=True, type=float, help="Film thickness (m).")
def trapdensity(eps, vtfl, thickness):
    """Trap density from SCLC trap-filled-limit voltage, in cm^-3."""
    print(f"{trap_density(eps, vtfl, thickness):.3g}")


@cli.command()
@state_option
@click.option("--listen", default="127.0.0.1:8000", show_default=True)
@click.option("--ui", default=None, help="Directory of built UI assets to serve at /.")
def serve(state, listen, ui):
    """Run the HTTP review service over one campaign state file."""
    import uvicorn

    from .service import CampaignManager, create_app

    host, _, port = listen.partition(":")
    lock = _state_lock(state)
    with lock.acquire(timeout=2):
        manager = CampaignManager.from_state_file(state)
        app = create_app(manager, static_dir=ui)
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="warning")


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        exc.show(file=sys.stderr)
        return 1
    except click.Abort:
        _info("aborted")
        return 2
    except NumericalFailureError as exc:
        _info(f"numerical failure: {exc}")
        return 3
    except ValidationError as exc:
        _info(f"error: {exc}")
        return 1
    except filelock.Timeout:
        _info("error: state file is locked by another process (serve running?)")
        return 2
    except (TransportError, BusyError, MolscoutError, OSError) as exc:
        _info(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
