//! Independent reference constructions shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use epistate::graph::{EdgeParts, Epistemology, StateGraph};
use epistate::mutation::{MutationSet, MutationSpec};
use epistate::schema::{StateMap, StateSchema, VariableSpec};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn map(pairs: &[(&str, &str)]) -> StateMap {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

fn get<'a>(s: &'a StateMap, k: &str) -> &'a str {
    s.get(k).map(String::as_str).unwrap_or("unknown")
}

fn set(s: &mut StateMap, k: &str, v: &str) {
    if v == "unknown" {
        s.remove(k);
    } else {
        s.insert(k.to_string(), v.to_string());
    }
}

/// Random instance: up to 3 mutation variables with up to 4 values each
/// (including `unknown`), one two-valued context variable `ctx`, and up to
/// 10 mutations biased toward discoveries.
pub fn random_instance(rng: &mut ChaCha8Rng) -> MutationSet {
    let nvars = rng.gen_range(1..=3);
    let mut vars = Vec::new();
    for i in 0..nvars {
        let n = rng.gen_range(1..=3);
        let mut values = vec!["unknown".to_string()];
        values.extend((0..n).map(|j| format!("x{j}")));
        vars.push((format!("v{i}"), values));
    }
    let mut specs: Vec<VariableSpec> =
        vars.iter().map(|(n, vals)| VariableSpec::mutation(n, vals.clone())).collect();
    specs.push(VariableSpec::context("ctx", ["a", "b"]));
    let schema = StateSchema::new(specs).unwrap();

    let count = rng.gen_range(1..=10);
    let mut mutations: Vec<MutationSpec> = Vec::new();
    let mut behaviors = BTreeSet::new();
    let mut attempts = 0;
    while mutations.len() < count && attempts < 200 {
        attempts += 1;
        let (var, values) = vars.choose(rng).unwrap();
        let discovery = rng.gen_bool(0.45);
        let from = if discovery { "unknown".to_string() } else { values.choose(rng).unwrap().clone() };
        let to = values.choose(rng).unwrap().clone();
        if from == to {
            continue;
        }
        let mut m = MutationSpec::new(&format!("m{:02}", mutations.len())).mutates(var, &from, &to);
        if nvars > 1 && rng.gen_bool(0.25) {
            let (v2, vals2) = vars.choose(rng).unwrap();
            let x2 = vals2.choose(rng).unwrap();
            if v2 != var {
                if rng.gen_bool(0.5) {
                    m = m.requires(v2, x2);
                } else if x2 != "unknown" {
                    let y2 = vals2.choose(rng).unwrap();
                    if y2 != x2 {
                        m = m.mutates(v2, x2, y2);
                    }
                }
            }
        }
        if nvars > 1 && rng.gen_bool(0.35) {
            let (v2, vals2) = vars.choose(rng).unwrap();
            if !m.mutates.contains_key(v2) && !m.requires.contains_key(v2) {
                m = m.requires(v2, vals2.choose(rng).unwrap());
            }
        }
        if rng.gen_bool(0.2) {
            m = m.requires("ctx", ["a", "b"].choose(rng).unwrap());
        }
        let key = format!("{:?}{:?}", m.mutates, m.requires);
        if behaviors.insert(key) {
            mutations.push(m);
        }
    }
    MutationSet::new(schema, mutations).unwrap()
}

/// Every full assignment of the mutation variables.
pub fn full_space(schema: &StateSchema) -> Vec<StateMap> {
    let mut out = vec![StateMap::new()];
    for var in schema.mutation_variables() {
        let values = var.values().unwrap();
        out = out
            .into_iter()
            .flat_map(|s| {
                values.iter().map(move |v| {
                    let mut n = s.clone();
                    set(&mut n, &var.name, v);
                    n
                })
            })
            .collect();
    }
    out
}

fn out_ok(s: &StateMap, m: &MutationSpec, schema: &StateSchema) -> bool {
    m.requires
        .iter()
        .filter(|(k, _)| schema.is_mutation(k))
        .all(|(k, v)| get(s, k) == v)
        && m.mutates.iter().all(|(k, t)| get(s, k) == t.from)
}

fn apply(s: &StateMap, m: &MutationSpec) -> StateMap {
    let mut n = s.clone();
    for (k, t) in &m.mutates {
        set(&mut n, k, &t.to);
    }
    n
}

/// Every one-step unification over the whole space.
pub fn raw_edges(set_: &MutationSet) -> BTreeSet<(StateMap, StateMap, String)> {
    let schema = set_.schema();
    let mut edges = BTreeSet::new();
    for s in full_space(schema) {
        for m in set_.mutations() {
            if out_ok(&s, m, schema) {
                edges.insert((s.clone(), apply(&s, m), m.name.clone()));
            }
        }
    }
    edges
}

fn undirected_component(
    root: &StateMap,
    edges: impl Iterator<Item = (StateMap, StateMap)>,
) -> BTreeSet<StateMap> {
    let mut adj: BTreeMap<StateMap, Vec<StateMap>> = BTreeMap::new();
    for (t, h) in edges {
        adj.entry(t.clone()).or_default().push(h.clone());
        adj.entry(h).or_default().push(t);
    }
    let mut seen = BTreeSet::from([root.clone()]);
    let mut queue = VecDeque::from([root.clone()]);
    while let Some(v) = queue.pop_front() {
        for w in adj.get(&v).into_iter().flatten() {
            if seen.insert(w.clone()) {
                queue.push_back(w.clone());
            }
        }
    }
    seen
}

pub struct Construction {
    pub epistemology: BTreeMap<String, StateMap>,
    pub vertices: BTreeSet<StateMap>,
    pub edges: Vec<EdgeParts>,
}

/// The graph obtained from the union of all one-step unifications over the
/// full state space, restricted to the root's component, then stripped.
pub fn mathematical_construction(set_: &MutationSet) -> Construction {
    let schema = set_.schema();
    let raw = raw_edges(set_);
    let root = StateMap::new();
    let component = undirected_component(&root, raw.iter().map(|(t, h, _)| (t.clone(), h.clone())));
    let raw: Vec<_> = raw.into_iter().filter(|(t, _, _)| component.contains(t)).collect();

    let mut epistemology: BTreeMap<String, StateMap> = BTreeMap::new();
    for var in schema.mutation_variables() {
        let mut acc: Option<BTreeSet<(String, String)>> = None;
        for (t, _, name) in &raw {
            let m = set_.get(name).unwrap();
            if m.mutates.get(&var.name).is_none_or(|tr| tr.from != "unknown") {
                continue;
            }
            let own: BTreeSet<(String, String)> = t
                .iter()
                .filter(|(k, _)| **k != var.name)
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            acc = Some(match acc {
                None => own,
                Some(prev) => prev.intersection(&own).cloned().collect(),
            });
        }
        if let Some(a) = acc {
            epistemology.insert(var.name.clone(), a.into_iter().collect());
        }
    }
    let strip = |s: &StateMap| -> StateMap {
        let mut s = s.clone();
        loop {
            let doomed: Vec<String> = s
                .keys()
                .filter(|k| {
                    epistemology
                        .get(*k)
                        .is_none_or(|req| req.iter().any(|(rk, rv)| get(&s, rk) != rv))
                })
                .cloned()
                .collect();
            if doomed.is_empty() {
                return s;
            }
            for k in doomed {
                s.remove(&k);
            }
        }
    };

    let mut grouped: BTreeMap<(StateMap, StateMap), BTreeSet<String>> = BTreeMap::new();
    for (t, h, name) in &raw {
        let (t, h) = (strip(t), strip(h));
        let m = set_.get(name).unwrap();
        if t == h || !out_ok(&t, m, schema) || strip(&apply(&t, m)) != h {
            continue;
        }
        grouped.entry((t, h)).or_default().insert(name.clone());
    }
    let vertices = undirected_component(&root, grouped.keys().cloned());
    let edges = grouped
        .into_iter()
        .filter(|((t, _), _)| vertices.contains(t))
        .map(|((tail, head), names)| {
            let mut names = names.into_iter();
            EdgeParts {
                tail,
                head,
                mutation: names.next().unwrap(),
                alternatives: names.collect(),
            }
        })
        .collect();
    Construction {
        epistemology,
        vertices,
        edges,
    }
}

pub fn construction_graph(set_: &MutationSet) -> StateGraph {
    let c = mathematical_construction(set_);
    let vertices: Vec<StateMap> = c.vertices.into_iter().collect();
    StateGraph::from_parts(set_.clone(), &vertices, &c.edges, &Epistemology(c.epistemology)).unwrap()
}

/// Breadth-first shortest chain length over the built graph, using only
/// edges with at least one mutation whose context requirements hold.
pub fn bfs_length(graph: &StateGraph, start: &StateMap, goal: &StateMap, context: &StateMap) -> Option<usize> {
    let schema = graph.mutation_set().schema();
    let usable = |names: Vec<&str>| {
        names.into_iter().any(|n| {
            let m = graph.mutation_set().get(n).unwrap();
            m.requires
                .iter()
                .filter(|(k, _)| !schema.is_mutation(k))
                .all(|(k, v)| get(context, k) == v)
        })
    };
    let s = graph.vertex_of(&graph.strip(start))?;
    let demands: Vec<(&String, &String)> = goal.iter().filter(|(k, _)| schema.is_mutation(k)).collect();
    let meets = |v: usize| {
        let st = graph.vertex_state(v);
        demands.iter().all(|(k, x)| get(&st, k) == x.as_str())
    };
    let mut dist = vec![usize::MAX; graph.vertex_count()];
    dist[s] = 0;
    let mut queue = VecDeque::from([s]);
    while let Some(v) = queue.pop_front() {
        if meets(v) {
            return Some(dist[v]);
        }
        for e in graph.outgoing(v) {
            if dist[e.head] == usize::MAX && usable(e.mutations().collect()) {
                dist[e.head] = dist[v] + 1;
                queue.push_back(e.head);
            }
        }
    }
    None
}

/// Random partial goal over the mutation variables.
pub fn random_goal(rng: &mut ChaCha8Rng, schema: &StateSchema) -> StateMap {
    let mut goal = StateMap::new();
    for var in schema.mutation_variables() {
        if rng.gen_bool(0.6) {
            let values = var.values().unwrap();
            goal.insert(var.name.clone(), values[rng.gen_range(1..values.len())].clone());
        }
    }
    goal
}

pub fn random_context(rng: &mut ChaCha8Rng) -> StateMap {
    match rng.gen_range(0..3) {
        0 => StateMap::new(),
        1 => map(&[("ctx", "a")]),
        _ => map(&[("ctx", "b")]),
    }
}
