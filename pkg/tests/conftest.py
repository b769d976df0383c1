import numpy as np
import pytest

from molscout.campaign import CampaignConfig, CampaignSession, CampaignStore, init_campaign
from molscout.domain import MoleculeLibrary, MoleculeRecord, ExperimentResult
from molscout.featurize import aggregate_records
from molscout.oracle import OracleConfig, sample_molecule
from molscout.acquire import AcquisitionConfig
from molscout.surrogate import FitConfig


def make_library(n: int, seed: int = 0, n_hard: int = 4) -> MoleculeLibrary:
    """Synthetic library: random finite hard descriptors, simple valid SMILES."""
    rng = np.random.default_rng(seed)
    hard_names = [f"hf_d{i}" for i in range(n_hard)]
    records = []
    for i in range(n):
        hard = {name: float(rng.normal()) for name in hard_names}
        records.append(
            MoleculeRecord(id=f"m{i:03d}", smiles="CC(=O)N", name=f"mol-{i:03d}", hard=hard)
        )
    return MoleculeLibrary(records=tuple(records), descriptor_names=tuple(sorted(hard_names)))


def make_profiles(library: MoleculeLibrary, oracle_seed: int = 7, n_samples: int = 10):
    cfg = OracleConfig(provider="mock", samples_per_molecule=n_samples, seed=oracle_seed)
    return {
        rec.id: aggregate_records(sample_molecule(cfg, rec)) for rec in library.records
    }


def hot_start_results(library: MoleculeLibrary, n: int, seed: int = 1) -> list[ExperimentResult]:
    """Round-0 results for the first n molecules, PCE drawn near 19%."""
    rng = np.random.default_rng(seed)
    out = []
    for rec in library.records[:n]:
        control = 19.25
        additive = float(np.clip(control * (1.0 + rng.normal(0.0, 0.05)), 1.0, 99.0))
        out.append(ExperimentResult.from_pce(rec.id, 0, additive, control))
    return out


@pytest.fixture
def tiny_library() -> MoleculeLibrary:
    return make_library(12, seed=3)


@pytest.fixture
def tiny_profiles(tiny_library):
    return make_profiles(tiny_library, oracle_seed=7, n_samples=10)


@pytest.fixture
def small_campaign_config() -> CampaignConfig:
    return CampaignConfig(
        oracle=OracleConfig(provider="mock", samples_per_molecule=6, seed=11),
        acquisition=AcquisitionConfig(shortlist_size=5),
        fit=FitConfig(seed=2),
        representation_mode="hybrid",
    )


@pytest.fixture
def campaign_state(tiny_library, small_campaign_config):
    return init_campaign(
        tiny_library,
        hot_start_results(tiny_library, 6),
        small_campaign_config,
        rng_seed=42,
    )


@pytest.fixture
def campaign_session(tmp_path, tiny_library, small_campaign_config):
    store = CampaignStore(tmp_path / "campaign.state")
    return CampaignSession.create(
        store,
        tiny_library,
        hot_start_results(tiny_library, 6),
        small_campaign_config,
        rng_seed=42,
    )
