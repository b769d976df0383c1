"""Closed-loop simulation harness with a planted ground truth.

The true response of a molecule is a known affine function of its latent
binding propensity (the same latent that drives the mock oracle's binding
judgments), so the exhaustive truth over any pool is computable directly.
Device results fed back into the campaign add seeded Gaussian noise.
"""

import numpy as np

from molscout.acquire import AcquisitionConfig
from molscout.campaign import CampaignConfig, CampaignSession, CampaignStore
from molscout.domain import ExperimentResult
from molscout.oracle import OracleConfig, latent_probability
from molscout.surrogate import FitConfig

from conftest import make_library

CONTROL_PCE = 19.25
TRUTH_SCALE = 0.15
TRUTH_OFFSET = -0.02
RESULT_NOISE = 0.01


def true_response(oracle_seed: int, molecule_id: str) -> float:
    """Planted ground truth: affine in the latent binding propensity."""
    return TRUTH_OFFSET + TRUTH_SCALE * latent_probability(oracle_seed, molecule_id, "binding")


def result_for(oracle_seed: int, molecule_id: str, round_index: int, rng: np.random.Generator) -> ExperimentResult:
    delta = true_response(oracle_seed, molecule_id) + RESULT_NOISE * float(rng.normal())
    additive = CONTROL_PCE * (1.0 + delta)
    return ExperimentResult.from_pce(molecule_id, round_index, additive, CONTROL_PCE)


def run_campaign_simulation(
    tmp_dir,
    seed: int,
    n_molecules: int = 200,
    n_hot: int = 8,
    n_rounds: int = 3,
    tested_per_round: int = 8,
    shortlist_size: int = 15,
    oracle_samples: int = 10,
    n_hard: int = 10,
    xi: float = 0.01,
) -> list[float]:
    """Run one seeded campaign; returns the shortlist's mean true response per round.

    The defaults keep round 1 data-limited (small hot start, many distractor
    hard descriptors) and the exploration offset small relative to the planted
    response range, so the loop's learning is visible within three rounds.
    """
    oracle_seed = 1000 + seed
    library = make_library(n_molecules, seed=seed, n_hard=n_hard)
    ids = library.ids()
    hot_ids = list(np.random.default_rng([seed, 7]).choice(ids, size=n_hot, replace=False))
    rng = np.random.default_rng([seed, 13])
    hot_results = [result_for(oracle_seed, m, 0, rng) for m in hot_ids]

    config = CampaignConfig(
        oracle=OracleConfig(provider="mock", samples_per_molecule=oracle_samples, seed=oracle_seed),
        acquisition=AcquisitionConfig(policy="ei", shortlist_size=shortlist_size, xi=xi),
        fit=FitConfig(seed=seed),
        representation_mode="hybrid",
    )
    store = CampaignStore(tmp_dir / f"sim-{seed}.state")
    session = CampaignSession.create(store, library, hot_results, config, rng_seed=seed)

    # the pool is every non-hot-start molecule, re-scored each round
    pool = [m for m in ids if m not in set(hot_ids)]
    tested = set(hot_ids)
    shortlist_truth: list[float] = []
    for round_index in range(1, n_rounds + 1):
        session.open_round(pool, template_version=f"v{round_index}")
        session.retrain()
        short = session.state.current_shortlist()
        shortlist_truth.append(float(np.mean([true_response(oracle_seed, c.molecule_id) for c in short])))
        to_test = [c.molecule_id for c in short if c.molecule_id not in tested][:tested_per_round]
        results = [result_for(oracle_seed, m, round_index, rng) for m in to_test]
        session.close_round(to_test, results)
        tested.update(to_test)
    return shortlist_truth
