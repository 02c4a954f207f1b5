mod common;

use common::*;
use epistate::fixtures::{layercake_lite, power_set};
use epistate::graph::{build_graph, find_chain, graph_equiv, StateGraph};
use epistate::mutation::{oracle_chain, satisfies, MutationSet, MutationSpec};
use epistate::schema::{StateMap, StateSchema, VariableSpec};
use epistate::store::NodeRecord;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uuid::Uuid;

fn record(discovered: StateMap, configured: StateMap) -> NodeRecord {
    let mut n = NodeRecord::new(Uuid::from_u128(1));
    n.discovered = discovered;
    n.configured = configured;
    n
}

/// Product of the value counts of the mutation variables.
fn state_bound(set: &MutationSet) -> usize {
    set.schema()
        .mutation_variables()
        .map(|v| v.values().unwrap().len())
        .product()
}

/// A random vertex plus context, and a goal some vertex satisfies.
fn random_query(rng: &mut ChaCha8Rng, g: &StateGraph) -> Option<(StateMap, StateMap)> {
    let schema = g.mutation_set().schema();
    let mut start = g.vertex_state(rng.gen_range(0..g.vertex_count()));
    start.extend(random_context(rng));
    let goal = random_goal(rng, schema);
    let reachable = (0..g.vertex_count()).any(|v| satisfies(&g.vertex_state(v), &goal, schema));
    reachable.then_some((start, goal))
}

fn context_of(start: &StateMap, schema: &StateSchema) -> StateMap {
    start
        .iter()
        .filter(|(k, _)| !schema.is_mutation(k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// Every state of the raw root component is already epistemically valid.
fn strip_is_identity(g: &StateGraph) -> bool {
    let set = g.mutation_set();
    let mut raw_states = std::collections::BTreeSet::new();
    for (t, h, _) in raw_edges(set) {
        raw_states.insert(t);
        raw_states.insert(h);
    }
    raw_states.iter().all(|s| g.strip(s) == *s)
}

#[test]
fn built_graph_matches_construction_on_200_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..200 {
        let set = random_instance(&mut rng);
        assert!(graph_equiv(&build_graph(&set), &construction_graph(&set)), "instance {i}");
    }
}

#[test]
fn fixture_graphs_match_construction() {
    for set in [power_set(), layercake_lite()] {
        assert!(graph_equiv(&build_graph(&set), &construction_graph(&set)));
    }
}

#[test]
fn chains_never_repeat_states_and_respect_the_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut queries = 0;
    while queries < 1000 {
        let set = random_instance(&mut rng);
        let g = build_graph(&set);
        let Some((start, goal)) = random_query(&mut rng, &g) else {
            continue;
        };
        queries += 1;
        let bound = state_bound(&set);
        let ctx = context_of(&start, set.schema());
        let mut configured = goal.clone();
        configured.extend(ctx);
        let found = find_chain(&g, &record(start.clone(), configured)).unwrap();
        for chain in found.into_iter().chain(oracle_chain(&start, &goal, &set)) {
            assert!(chain.has_unique_states(set.schema()), "{chain:?}");
            assert!(chain.len() <= bound);
        }
    }
}

#[test]
fn find_chain_is_never_longer_than_the_oracle_and_matches_bfs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut solved = 0;
    while solved < 100 {
        let set = random_instance(&mut rng);
        let g = build_graph(&set);
        let Some((start, goal)) = random_query(&mut rng, &g) else {
            continue;
        };
        let ctx = context_of(&start, set.schema());
        let Some(steps) = g.shortest_steps(&start, &goal, &ctx).unwrap() else {
            continue;
        };
        solved += 1;
        assert_eq!(Some(steps.len()), bfs_length(&g, &start, &goal, &ctx));
        if let Some(o) = oracle_chain(&start, &goal, &set) {
            assert!(steps.len() <= o.len());
        }
    }
}

#[test]
fn solvability_agrees_with_the_oracle_when_nothing_is_stripped() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    while checked < 300 {
        let set = random_instance(&mut rng);
        let g = build_graph(&set);
        if !strip_is_identity(&g) {
            continue;
        }
        let Some((start, goal)) = random_query(&mut rng, &g) else {
            continue;
        };
        checked += 1;
        let ctx = context_of(&start, set.schema());
        let ours = g.shortest_steps(&start, &goal, &ctx).unwrap();
        let oracle = oracle_chain(&start, &goal, &set);
        assert_eq!(ours.is_some(), oracle.is_some(), "{start:?} -> {goal:?}");
    }
}

/// `b` is knowable only while `a=x0`. Once `a` moves on, the graph forgets
/// `b`, so a goal naming both has no vertex even though the raw space has a
/// path to it.
#[test]
fn forgotten_variable_makes_goal_unsolvable_in_graph_only() {
    let schema = StateSchema::new([
        VariableSpec::mutation("a", ["unknown", "x0", "x1"]),
        VariableSpec::mutation("b", ["unknown", "y"]),
    ])
    .unwrap();
    let set = MutationSet::new(
        schema,
        [
            MutationSpec::new("find_a").mutates("a", "unknown", "x0"),
            MutationSpec::new("find_b").mutates("b", "unknown", "y").requires("a", "x0"),
            MutationSpec::new("advance").mutates("a", "x0", "x1"),
        ],
    )
    .unwrap();
    let g = build_graph(&set);
    let start = map(&[("a", "x0"), ("b", "y")]);
    let goal = map(&[("a", "x1"), ("b", "y")]);
    assert_eq!(oracle_chain(&start, &goal, &set).unwrap().names(), ["advance"]);
    assert_eq!(g.shortest_steps(&start, &goal, &StateMap::new()).unwrap(), None);
    let partial = g.shortest_steps(&start, &map(&[("a", "x1")]), &StateMap::new()).unwrap().unwrap();
    assert_eq!(partial.len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn building_is_deterministic(seed in any::<u64>()) {
        let set = random_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(graph_equiv(&build_graph(&set), &build_graph(&set)));
    }

    #[test]
    fn vertices_are_fixed_points_of_stripping(seed in any::<u64>()) {
        let g = build_graph(&random_instance(&mut ChaCha8Rng::seed_from_u64(seed)));
        for v in 0..g.vertex_count() {
            let s = g.vertex_state(v);
            prop_assert_eq!(g.strip(&s), s.clone());
            prop_assert!(g.is_epistemically_valid(&s));
        }
    }

    #[test]
    fn edges_unify_their_mutation(seed in any::<u64>()) {
        let g = build_graph(&random_instance(&mut ChaCha8Rng::seed_from_u64(seed)));
        let set = g.mutation_set();
        for e in g.edges() {
            let tail = g.vertex_state(e.tail);
            for name in e.mutations() {
                let m = set.get(name).unwrap();
                let mut next = tail.clone();
                for (var, t) in &m.mutates {
                    prop_assert_eq!(tail.get(var).map(String::as_str).unwrap_or("unknown"), t.from.as_str());
                    if t.to == "unknown" {
                        next.remove(var);
                    } else {
                        next.insert(var.clone(), t.to.clone());
                    }
                }
                prop_assert_eq!(g.strip(&next), g.vertex_state(e.head));
            }
        }
    }

    #[test]
    fn chains_walk_the_graph(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_instance(&mut rng);
        let g = build_graph(&set);
        if let Some((start, goal)) = random_query(&mut rng, &g) {
            let ctx = context_of(&start, set.schema());
            if let Some(steps) = g.shortest_steps(&start, &goal, &ctx).unwrap() {
                let mut at = g.strip(&start);
                at.retain(|k, _| set.schema().is_mutation(k));
                for s in &steps {
                    let pre = g.vertex_of(&s.pre).unwrap();
                    prop_assert_eq!(g.vertex_state(pre), at.clone());
                    let post = g.vertex_of(&s.post).unwrap();
                    let e = g.edge_between(pre, post).unwrap();
                    prop_assert!(e.mutations().any(|n| n == s.mutation));
                    at = s.post.clone();
                }
                prop_assert!(satisfies(&at, &goal, set.schema()));
            }
        }
    }
}
