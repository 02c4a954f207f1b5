use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use super::space::{State, StateSpace};
use super::{strip, StateGraph};
use crate::mutation::MutationSet;

/// Builds the epistemic state graph of a mutation set.
///
/// Expansion walks breadth-first from the all-unknown root, following every
/// mutation that is out-compatible (forward) or in-compatible (backward)
/// with a visited state; context requirements are left to search time.
/// Each variable's epistemology is the set of assignments shared by the
/// tails of all edges that discover it. Every state is then stripped of
/// unknowable values, edges that no longer describe a real transition are
/// dropped, parallel edges collapse into one labeled by the smallest name,
/// and whatever the root cannot reach (ignoring direction) is removed.
pub fn build_graph(set: &MutationSet) -> StateGraph {
    let space = StateSpace::new(set);
    for var in set.undiscoverable_variables() {
        tracing::warn!(variable = var, "variable has no discovery mutation and can never leave unknown");
    }

    // Expansion.
    let mut states: Vec<State> = Vec::new();
    let mut ids: HashMap<State, usize> = HashMap::new();
    let mut queue = VecDeque::new();
    let mut raw_edges: HashSet<(usize, usize, usize)> = HashSet::new();
    let mut intern = |s: State, states: &mut Vec<State>, queue: &mut VecDeque<usize>| -> usize {
        *ids.entry(s).or_insert_with_key(|s| {
            states.push(s.clone());
            queue.push_back(states.len() - 1);
            states.len() - 1
        })
    };
    intern(space.root(), &mut states, &mut queue);
    while let Some(v) = queue.pop_front() {
        for m in &space.mutations {
            let s = states[v].clone();
            if m.out_ok(&s) {
                let h = intern(m.apply(&s), &mut states, &mut queue);
                raw_edges.insert((v, h, m.index));
            }
            if m.in_ok(&s) {
                let t = intern(m.rewind(&s), &mut states, &mut queue);
                raw_edges.insert((t, v, m.index));
            }
        }
    }
    let explored = states.len();

    // Epistemology.
    let vars = space.vars.len();
    let mut shared: Vec<Option<Vec<Option<u8>>>> = vec![None; vars];
    for &(t, _, m) in &raw_edges {
        let tail = &states[t];
        let m = &space.mutations[m];
        for (var, acc) in shared.iter_mut().enumerate() {
            if !m.discovers(var) {
                continue;
            }
            let own: Vec<Option<u8>> = (0..vars)
                .map(|w| (w != var && tail.get(w) != 0).then(|| tail.get(w)))
                .collect();
            *acc = Some(match acc.take() {
                None => own,
                Some(prev) => prev
                    .into_iter()
                    .zip(own)
                    .map(|(a, b)| if a == b { a } else { None })
                    .collect(),
            });
        }
    }
    let requirements: Vec<Option<Vec<(usize, u8)>>> = shared
        .into_iter()
        .map(|acc| {
            acc.map(|a| {
                a.into_iter()
                    .enumerate()
                    .filter_map(|(w, x)| x.map(|x| (w, x)))
                    .collect()
            })
        })
        .collect();

    // Stripping, edge filtering and grouping.
    let stripped: Vec<State> = states.iter().map(|s| strip(s, &requirements)).collect();
    let mut grouped: BTreeMap<(State, State), Vec<usize>> = BTreeMap::new();
    for &(t, h, m) in &raw_edges {
        let (t, h) = (&stripped[t], &stripped[h]);
        let mutation = &space.mutations[m];
        if t == h || !mutation.out_ok(t) || strip(&mutation.apply(t), &requirements) != *h {
            continue;
        }
        grouped.entry((t.clone(), h.clone())).or_default().push(m);
    }

    // Root component.
    let root = space.root();
    let mut adjacency: HashMap<&State, Vec<&State>> = HashMap::new();
    for (t, h) in grouped.keys() {
        adjacency.entry(t).or_default().push(h);
        adjacency.entry(h).or_default().push(t);
    }
    let mut reached: HashSet<&State> = HashSet::from([&root]);
    let mut frontier = vec![&root];
    while let Some(v) = frontier.pop() {
        for &w in adjacency.get(v).into_iter().flatten() {
            if reached.insert(w) {
                frontier.push(w);
            }
        }
    }
    let vertices: Vec<State> = reached.iter().map(|s| (*s).clone()).collect();
    let edges = grouped
        .iter()
        .filter(|((t, _), _)| reached.contains(t))
        .map(|((t, h), ms)| (t.clone(), h.clone(), ms.clone()))
        .collect();
    StateGraph::assemble(set.clone(), space, vertices, edges, requirements, explored)
}
