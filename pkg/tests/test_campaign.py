import copy
import hashlib
import json

import pytest

from molscout.campaign import (
    CampaignStore,
    current_gp,
    init_campaign,
    open_round,
    record_result,
    retrain_and_shortlist,
    serialize_state,
    set_feasibility,
    set_profiles,
    state_from_document,
    state_hash,
    state_to_document,
)
from molscout.domain import ExperimentResult
from molscout.errors import (
    DuplicateResultError,
    InsufficientDataError,
    MissingProfileError,
    RoundSequenceError,
    UnknownMoleculeError,
    ValidationError,
)

from conftest import hot_start_results
from simharness import run_campaign_simulation


def r(mol, rnd, additive, control=19.25):
    return ExperimentResult.from_pce(mol, rnd, additive, control)


class TestInit:
    def test_hot_start(self, tiny_library, small_campaign_config):
        results = hot_start_results(tiny_library, 6)
        state = init_campaign(tiny_library, results, small_campaign_config)
        assert state.version == 1
        assert state.rounds == []
        assert len(state.results) == 6

    def test_single_result_rejected(self, tiny_library, small_campaign_config):
        with pytest.raises(InsufficientDataError):
            init_campaign(tiny_library, hot_start_results(tiny_library, 1), small_campaign_config)

    def test_duplicate_hot_start_rejected(self, tiny_library, small_campaign_config):
        res = hot_start_results(tiny_library, 3)
        res.append(res[0])
        with pytest.raises(DuplicateResultError):
            init_campaign(tiny_library, res, small_campaign_config)

    def test_unknown_molecule_rejected(self, tiny_library, small_campaign_config):
        res = hot_start_results(tiny_library, 2) + [r("ghost", 0, 20.0)]
        with pytest.raises(UnknownMoleculeError):
            init_campaign(tiny_library, res, small_campaign_config)

    def test_nonzero_round_rejected(self, tiny_library, small_campaign_config):
        res = hot_start_results(tiny_library, 2) + [r(tiny_library.ids()[5], 1, 20.0)]
        with pytest.raises(ValidationError):
            init_campaign(tiny_library, res, small_campaign_config)

    def test_campaign_id_deterministic(self, tiny_library, small_campaign_config):
        a = init_campaign(tiny_library, hot_start_results(tiny_library, 4), small_campaign_config, rng_seed=5)
        b = init_campaign(tiny_library, hot_start_results(tiny_library, 4), small_campaign_config, rng_seed=5)
        assert a.campaign_id == b.campaign_id


class TestRounds:
    def test_open_first_round(self, campaign_state):
        pool = campaign_state.library.ids()[6:]
        open_round(campaign_state, pool, "v1")
        rnd = campaign_state.current_round
        assert rnd.index == 1 and rnd.status == "open"
        assert len(rnd.pool_ids) == len(pool)
        assert campaign_state.version == 2

    def test_open_while_open_rejected(self, campaign_state):
        pool = campaign_state.library.ids()[6:]
        open_round(campaign_state, pool, "v1")
        with pytest.raises(RoundSequenceError):
            open_round(campaign_state, pool, "v2")

    def test_three_rounds_with_changing_pools(self, campaign_session):
        ids = campaign_session.state.library.ids()
        pools = [ids[6:], ids[6:10], ids[8:]]
        for i, pool in enumerate(pools, start=1):
            campaign_session.open_round(pool, f"v{i}")
            campaign_session.retrain()
            campaign_session.close_round([])
        assert [len(rnd.pool_ids) for rnd in campaign_session.state.rounds] == [6, 4, 4]
        assert all(rnd.status == "closed" for rnd in campaign_session.state.rounds)

    def test_prioritized_subset(self, campaign_session):
        ids = campaign_session.state.library.ids()
        pool = ids[6:]
        campaign_session.open_round(pool, "v1", prioritized_ids=pool[:3])
        campaign_session.retrain()
        scored_ids = {c.molecule_id for c in campaign_session.state.current_round.scored}
        assert scored_ids == set(pool[:3])

    def test_prioritized_outside_pool_rejected(self, campaign_state):
        ids = campaign_state.library.ids()
        with pytest.raises(ValidationError):
            open_round(campaign_state, ids[6:8], "v1", prioritized_ids=[ids[0]])


class TestRecordResult:
    def test_append_and_delta(self, campaign_state):
        mol = campaign_state.library.ids()[7]
        before = list(campaign_state.results)
        record_result(campaign_state, r(mol, 0, 20.87))
        assert campaign_state.results[:-1] == before
        assert campaign_state.results[-1].delta_rel == pytest.approx(0.0841558, abs=1e-6)
        assert campaign_state.version == 2

    def test_future_round_rejected(self, campaign_state):
        mol = campaign_state.library.ids()[7]
        with pytest.raises(ValidationError):
            record_result(campaign_state, r(mol, 3, 20.0))

    def test_duplicate_rejected(self, campaign_state):
        mol = campaign_state.library.ids()[7]
        record_result(campaign_state, r(mol, 0, 20.0))
        with pytest.raises(DuplicateResultError):
            record_result(campaign_state, r(mol, 0, 21.0))

    def test_unknown_molecule(self, campaign_state):
        with pytest.raises(UnknownMoleculeError):
            record_result(campaign_state, r("ghost", 0, 20.0))


class TestRetrain:
    def test_training_grows_across_rounds(self, campaign_session):
        state = campaign_session.state
        ids = state.library.ids()
        campaign_session.open_round(ids[6:], "v1")
        campaign_session.retrain()
        assert current_gp(state).n == 6
        tested = state.current_shortlist()[0].molecule_id
        campaign_session.close_round([tested], [r(tested, 1, 20.1)])
        campaign_session.open_round(ids[6:], "v2")
        campaign_session.retrain()
        assert current_gp(state).n == 7

    def test_requires_open_round(self, campaign_state):
        with pytest.raises(RoundSequenceError):
            retrain_and_shortlist(campaign_state)

    def test_missing_profiles_rejected(self, campaign_state):
        pool = campaign_state.library.ids()[6:]
        open_round(campaign_state, pool, "v1")
        with pytest.raises(MissingProfileError):
            retrain_and_shortlist(campaign_state)

    def test_deterministic_given_state(self, campaign_session):
        ids = campaign_session.state.library.ids()
        campaign_session.open_round(ids[6:], "v1")
        campaign_session.ensure_profiles()
        a = copy.deepcopy(campaign_session.state)
        b = copy.deepcopy(campaign_session.state)
        retrain_and_shortlist(a)
        retrain_and_shortlist(b)
        assert [c.to_dict() for c in a.current_round.scored] == [c.to_dict() for c in b.current_round.scored]
        assert a.current_gp == b.current_gp

    def test_moves_to_awaiting(self, campaign_session):
        ids = campaign_session.state.library.ids()
        campaign_session.open_round(ids[6:], "v1")
        campaign_session.retrain()
        assert campaign_session.state.current_round.status == "awaiting_results"
        with pytest.raises(RoundSequenceError):
            campaign_session.retrain()


class TestCloseRound:
    def _to_awaiting(self, session):
        ids = session.state.library.ids()
        session.open_round(ids[6:], "v1")
        session.retrain()
        return session

    def test_close_with_result(self, campaign_session):
        self._to_awaiting(campaign_session)
        mol = campaign_session.state.current_shortlist()[0].molecule_id
        n_before = len(campaign_session.state.results)
        campaign_session.close_round([mol], [r(mol, 1, 17.60, 19.85)])
        rnd = campaign_session.state.current_round
        assert rnd.status == "closed"
        assert rnd.tested == [mol]
        assert len(campaign_session.state.results) == n_before + 1

    def test_close_empty_allowed(self, campaign_session):
        self._to_awaiting(campaign_session)
        campaign_session.close_round([])
        assert campaign_session.state.current_round.status == "closed"
        assert campaign_session.state.current_round.tested == []

    def test_close_twice_rejected(self, campaign_session):
        self._to_awaiting(campaign_session)
        campaign_session.close_round([])
        with pytest.raises(RoundSequenceError):
            campaign_session.close_round([])

    def test_result_for_untested_molecule_rejected(self, campaign_session):
        self._to_awaiting(campaign_session)
        pool = campaign_session.state.current_round.pool_ids
        with pytest.raises(ValidationError):
            campaign_session.close_round([pool[0]], [r(pool[1], 1, 20.0)])

    def test_off_shortlist_but_in_pool_allowed(self, campaign_session):
        self._to_awaiting(campaign_session)
        shortlist_ids = {c.molecule_id for c in campaign_session.state.current_shortlist()}
        off = [m for m in campaign_session.state.current_round.pool_ids if m not in shortlist_ids]
        if off:
            campaign_session.close_round([off[0]], [r(off[0], 1, 20.0)])
            assert off[0] in campaign_session.state.current_round.tested

    def test_closed_round_immutable_under_later_ops(self, campaign_session):
        self._to_awaiting(campaign_session)
        campaign_session.close_round([])
        frozen = json.dumps(
            campaign_session.state.rounds[0].to_dict(5), sort_keys=True
        )
        ids = campaign_session.state.library.ids()
        campaign_session.open_round(ids[6:], "v2")
        campaign_session.retrain()
        campaign_session.set_feasibility(ids[6], False, "nope")
        campaign_session.record_result(r(ids[7], 0, 21.0))
        campaign_session.close_round([])
        again = json.dumps(campaign_session.state.rounds[0].to_dict(5), sort_keys=True)
        assert hashlib.sha256(frozen.encode()).hexdigest() == hashlib.sha256(again.encode()).hexdigest()


class TestFeasibility:
    def test_toggle_rerank(self, campaign_session):
        ids = campaign_session.state.library.ids()
        campaign_session.open_round(ids[6:], "v1")
        campaign_session.retrain()
        short = campaign_session.state.current_shortlist()
        top, second = short[0].molecule_id, short[1].molecule_id
        campaign_session.set_feasibility(top, False, "not synthesizable")
        after = campaign_session.state.current_shortlist()
        assert after[0].molecule_id == second
        assert all(c.molecule_id != top for c in after)
        campaign_session.set_feasibility(top, True)
        restored = campaign_session.state.current_shortlist()
        assert [c.molecule_id for c in restored] == [c.molecule_id for c in short]

    def test_requires_active_round(self, campaign_state):
        with pytest.raises(RoundSequenceError):
            set_feasibility(campaign_state, campaign_state.library.ids()[0], False)


class TestPersistence:
    def test_save_load_save_byte_identical(self, campaign_session, tmp_path):
        ids = campaign_session.state.library.ids()
        campaign_session.open_round(ids[6:], "v1")
        campaign_session.retrain()
        text1 = serialize_state(campaign_session.state)
        loaded = state_from_document(json.loads(text1))
        text2 = serialize_state(loaded)
        assert text1.encode() == text2.encode()

    def test_round_trip_document(self, campaign_session):
        doc = state_to_document(campaign_session.state)
        clone = state_from_document(doc)
        assert state_hash(clone) == state_hash(campaign_session.state)

    def test_replay_reproduces_final_state(self, campaign_session):
        ids = campaign_session.state.library.ids()
        campaign_session.open_round(ids[6:], "v1")
        campaign_session.retrain()
        short = campaign_session.state.current_shortlist()
        campaign_session.set_feasibility(short[0].molecule_id, False, "off-spec")
        tested = campaign_session.state.current_shortlist()[0].molecule_id
        campaign_session.close_round([tested], [r(tested, 1, 20.57, 19.85)])
        campaign_session.open_round(ids[6:], "v2")
        campaign_session.retrain()

        replayed = campaign_session.store.replay()
        assert state_hash(replayed) == state_hash(campaign_session.state)

    def test_replay_includes_oracle_data_as_events(self, campaign_session):
        ids = campaign_session.state.library.ids()
        campaign_session.open_round(ids[6:], "v1")
        campaign_session.retrain()
        ops = [e["op"] for e in campaign_session.store.read_events()]
        assert ops == ["init", "open_round", "set_profiles", "retrain"]

    def test_store_load_missing_file(self, tmp_path):
        store = CampaignStore(tmp_path / "missing.state")
        with pytest.raises(ValidationError):
            store.load()


class TestClosedLoopSimulation:
    def test_single_seed_shortlist_improves(self, tmp_path):
        truths = run_campaign_simulation(tmp_path, seed=0)
        assert len(truths) == 3
        assert truths[2] > truths[0]

    def test_simulation_deterministic(self, tmp_path):
        a = run_campaign_simulation(tmp_path / "a", seed=3, n_molecules=60, n_hot=6, tested_per_round=3, shortlist_size=5)
        b = run_campaign_simulation(tmp_path / "b", seed=3, n_molecules=60, n_hot=6, tested_per_round=3, shortlist_size=5)
        assert a == b
