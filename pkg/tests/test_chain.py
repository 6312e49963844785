import pytest

from confmc.chain import (
    EnvMismatch,
    StochasticityViolation,
    build_markov_chain,
    build_markov_chain_prob,
    make_absorbing,
    observation_set,
    transition_probability,
    validate_stochastic,
    MarkovChain,
)
from confmc.confusion import cm1, from_precision_recall, identity
from confmc.scenario import (
    AgentState,
    Controller,
    EnvClass,
    ScenarioParams,
    SystemState,
    make_controller,
)

SMALL = ScenarioParams(8, 6, 2)


def small_chain(env, v0=1, cm=None, semantics="absorb"):
    return build_markov_chain(
        SMALL,
        make_controller(SMALL, semantics),
        cm or cm1(),
        env,
        AgentState(1, v0),
        semantics,
    )


class TestTransitionProbability:
    def test_sums_matrix_column_over_matching_observations(self):
        # at (10,3) obj and empty disagree with ped only through speed;
        # build a state where exactly obj+empty land together
        params = ScenarioParams(65, 57, 5)
        ctl = make_controller(params)
        s1 = SystemState(AgentState(10, 5), EnvClass.PED)
        # at the speed limit: ped brakes to 4, obj brakes to 4, empty holds 5
        assert ctl.step(s1.agent, EnvClass.PED) == ctl.step(s1.agent, EnvClass.OBJ)
        merged = SystemState(ctl.step(s1.agent, EnvClass.PED), EnvClass.PED)
        p = transition_probability(ctl, cm1(), EnvClass.PED, s1, merged)
        assert p == pytest.approx(10 / 15 + 2 / 15, abs=1e-12)

    def test_obj_empty_merge_under_true_ped(self):
        # spec-style case: the two wrong observations agree and differ from ped
        params = ScenarioParams(65, 57, 1)
        ctl = make_controller(params)
        s1 = SystemState(AgentState(55, 1), EnvClass.PED)
        merged = SystemState(AgentState(56, 1), EnvClass.PED)
        p = transition_probability(ctl, cm1(), EnvClass.PED, s1, merged)
        assert p == pytest.approx(2 / 15 + 3 / 15, abs=1e-12)

    def test_identity_matrix_point_mass(self):
        ctl = make_controller(SMALL)
        s1 = SystemState(AgentState(1, 1), EnvClass.OBJ)
        follow = SystemState(ctl.step(s1.agent, EnvClass.OBJ), EnvClass.OBJ)
        assert transition_probability(ctl, identity(), EnvClass.OBJ, s1, follow) == 1.0
        other = SystemState(AgentState(2, 2), EnvClass.OBJ)
        if other != follow:
            assert transition_probability(ctl, identity(), EnvClass.OBJ, s1, other) == 0.0

    def test_total_mass_over_all_successors_is_one(self):
        ctl = make_controller(SMALL)
        for env in EnvClass:
            s1 = SystemState(AgentState(2, 1), env)
            total = sum(
                transition_probability(ctl, cm1(), env, s1, SystemState(t, env))
                for t in {ctl.step(s1.agent, y) for y in EnvClass}
            )
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_env_mismatch(self):
        ctl = make_controller(SMALL)
        with pytest.raises(EnvMismatch):
            transition_probability(
                ctl,
                cm1(),
                EnvClass.PED,
                SystemState(AgentState(1, 1), EnvClass.OBJ),
                SystemState(AgentState(2, 1), EnvClass.OBJ),
            )

    def test_observation_sets_partition(self):
        ctl = make_controller(SMALL)
        s1 = SystemState(AgentState(2, 1), EnvClass.OBJ)
        successors = {ctl.step(s1.agent, y) for y in EnvClass}
        sets = [
            observation_set(ctl, s1, SystemState(t, EnvClass.OBJ)) for t in successors
        ]
        union = frozenset().union(*sets)
        assert union == frozenset(EnvClass)
        assert sum(len(s) for s in sets) == 3  # pairwise disjoint


class TestBuild:
    def test_identity_chain_is_deterministic(self):
        for env in EnvClass:
            chain = small_chain(env, cm=identity())
            for i, row in enumerate(chain.transitions):
                assert len(row) == 1
                assert row[0][1] == pytest.approx(1.0, abs=1e-12)

    def test_slow_approach_edge_masses(self):
        # v_max=1 under a true obstacle: from (55,1) the stop gets the ped
        # column mass 2/15 and the continuation the remaining 13/15
        params = ScenarioParams(65, 57, 1)
        chain = build_markov_chain(
            params, make_controller(params), cm1(), EnvClass.OBJ, AgentState(1, 1)
        )
        src = chain.index_of(SystemState(AgentState(55, 1), EnvClass.OBJ))
        masses = {chain.states[j].agent: p for j, p in chain.transitions[src]}
        assert masses[AgentState(56, 0)] == pytest.approx(2 / 15, abs=1e-12)
        assert masses[AgentState(56, 1)] == pytest.approx(13 / 15, abs=1e-12)

    def test_matches_hand_assembled_small_instance(self):
        # brute force: for every state pair, sum matrix entries over the
        # observations whose response lands on the pair's successor
        env = EnvClass.PED
        cm = cm1()
        ctl = make_controller(SMALL)
        chain = small_chain(env)
        stop = AgentState(SMALL.stop_cell, 0)
        for i, state in enumerate(chain.states):
            expected: dict[AgentState, float] = {}
            if state.agent.cell == SMALL.road_length or state.agent == stop:
                expected[state.agent] = 1.0
            else:
                for y in EnvClass:
                    succ = ctl.step(state.agent, y)
                    mass = float(cm.entries[y.index][env.index])
                    if mass:
                        expected[succ] = expected.get(succ, 0.0) + mass
            built = {chain.states[j].agent: p for j, p in chain.transitions[i]}
            assert built.keys() == expected.keys(), state
            for agent, p in expected.items():
                assert built[agent] == pytest.approx(p, abs=1e-12)

    def test_construction_closure_and_env_purity(self):
        chain = small_chain(EnvClass.OBJ, v0=2)
        assert all(s.env is EnvClass.OBJ for s in chain.states)
        reachable = {0}
        for i, row in enumerate(chain.transitions):
            for j, _ in row:
                reachable.add(j)
        assert reachable == set(range(chain.n))

    def test_row_conservation_independent_of_controller(self):
        for env in EnvClass:
            chain = small_chain(env, v0=2)
            report = validate_stochastic(chain)
            assert report.passed
            assert report.max_deviation <= 1e-9

    def test_deterministic_construction(self):
        a = small_chain(EnvClass.EMPTY, v0=2)
        b = small_chain(EnvClass.EMPTY, v0=2)
        assert a == b
        assert a.states == b.states and a.transitions == b.transitions

    def test_parameterized_matrices_build_stochastic_chains(self):
        count = 0
        for pi in range(10):
            for ri in range(10):
                cm = from_precision_recall(0.55 + 0.05 * pi, 0.1 + 0.1 * ri)
                chain = small_chain(EnvClass.OBJ, cm=cm)
                assert validate_stochastic(chain).passed
                count += 1
        assert count == 100

    def test_bad_labels_rejected(self):
        bad = identity(("a", "b", "c"))
        with pytest.raises(ValueError):
            small_chain(EnvClass.PED, cm=bad)


class TestProbabilisticController:
    def test_point_mass_reduces_to_deterministic(self):
        det = make_controller(SMALL)
        point = Controller(
            step=det.step,
            step_dist=lambda s, y: [(det.step(s, y), 1.0)],
        )
        a = build_markov_chain(SMALL, det, cm1(), EnvClass.PED, AgentState(1, 1))
        b = build_markov_chain_prob(SMALL, point, cm1(), EnvClass.PED, AgentState(1, 1))
        assert a == b

    def test_even_split_with_identity_matrix(self):
        det = make_controller(SMALL)

        def split(s, y):
            succ = det.step(s, y)
            other = AgentState(succ.cell, max(0, succ.speed - 1))
            if other == succ:
                return [(succ, 1.0)]
            return [(succ, 0.5), (other, 0.5)]

        ctl = Controller(step=det.step, step_dist=split)
        chain = build_markov_chain_prob(SMALL, ctl, identity(), EnvClass.OBJ, AgentState(1, 2))
        row = chain.transitions[0]
        assert sorted(p for _, p in row) == [0.5, 0.5]

    def test_split_on_ped_only_matches_hand_sum(self):
        det = make_controller(SMALL)

        def split(s, y):
            succ = det.step(s, y)
            if y is EnvClass.PED and succ.speed >= 1:
                slower = AgentState(succ.cell, succ.speed - 1)
                return [(succ, 0.5), (slower, 0.5)]
            return [(succ, 1.0)]

        ctl = Controller(step=det.step, step_dist=split)
        env = EnvClass.OBJ
        chain = build_markov_chain_prob(SMALL, ctl, cm1(), env, AgentState(1, 2))
        state = chain.states[0]
        expected: dict[AgentState, float] = {}
        for y in EnvClass:
            for succ, q in split(state.agent, y):
                mass = float(cm1().entries[y.index][env.index]) * q
                expected[succ] = expected.get(succ, 0.0) + mass
        built = {chain.states[j].agent: p for j, p in chain.transitions[0]}
        assert built.keys() == {a for a, m in expected.items() if m > 0}
        for agent, mass in expected.items():
            if mass > 0:
                assert built[agent] == pytest.approx(mass, abs=1e-12)

    def test_unnormalized_distribution_rejected(self):
        det = make_controller(SMALL)
        ctl = Controller(step=det.step, step_dist=lambda s, y: [(det.step(s, y), 0.7)])
        with pytest.raises(StochasticityViolation):
            build_markov_chain_prob(SMALL, ctl, cm1(), EnvClass.PED, AgentState(1, 1))

    def test_missing_step_dist_rejected(self):
        with pytest.raises(ValueError):
            build_markov_chain_prob(
                SMALL, make_controller(SMALL), cm1(), EnvClass.PED, AgentState(1, 1)
            )


class TestMakeAbsorbing:
    def test_empty_predicate_is_identity(self):
        chain = small_chain(EnvClass.OBJ)
        assert make_absorbing(chain, lambda s: False) == chain

    def test_full_predicate_self_loops_everything(self):
        chain = small_chain(EnvClass.OBJ)
        frozen = make_absorbing(chain, lambda s: True)
        assert all(frozen.is_absorbing(i) for i in range(frozen.n))

    def test_stop_surgery_recovers_absorb_semantics(self):
        stop = AgentState(SMALL.stop_cell, 0)
        restart = small_chain(EnvClass.PED, v0=2, semantics="restart")
        absorb = small_chain(EnvClass.PED, v0=2, semantics="absorb")
        patched = make_absorbing(restart, lambda s: s.agent == stop)
        assert patched == absorb


class TestValidateStochastic:
    def test_built_chains_pass(self):
        assert validate_stochastic(small_chain(EnvClass.EMPTY)).passed

    def test_halved_edge_fails_and_reports_row(self):
        chain = small_chain(EnvClass.PED)
        target_row = next(
            i for i, row in enumerate(chain.transitions) if len(row) > 1
        )
        rows = list(chain.transitions)
        broken = [(j, p / 2 if k == 0 else p) for k, (j, p) in enumerate(rows[target_row])]
        rows[target_row] = tuple(broken)
        bad = MarkovChain(states=chain.states, transitions=tuple(rows), env=chain.env)
        report = validate_stochastic(bad)
        assert not report.passed
        assert target_row in report.offending
