//! Epistemic state graph: construction, search, comparison and export.

mod build;
mod dot;
mod search;
pub mod space;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;

pub use build::build_graph;
pub use dot::{epistemology_report, export_dot, lint};
pub use search::find_chain;

use crate::error::GraphError;
use crate::mutation::MutationSet;
use crate::schema::StateMap;
use space::{State, StateSpace};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    /// Lexicographically smallest mutation joining the pair.
    pub mutation: String,
    /// Other mutations joining the same pair, sorted.
    pub alternatives: Vec<String>,
}

impl Edge {
    /// Primary mutation followed by the alternatives, in name order.
    pub fn mutations(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.mutation.as_str()).chain(self.alternatives.iter().map(String::as_str))
    }
}

/// Per-variable assignments that must hold for the variable to be known.
/// A variable with no entry can never leave `unknown`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Epistemology(pub BTreeMap<String, StateMap>);

impl Epistemology {
    pub fn get(&self, variable: &str) -> Option<&StateMap> {
        self.0.get(variable)
    }

    pub fn is_knowable(&self, variable: &str) -> bool {
        self.0.contains_key(variable)
    }
}

impl fmt::Display for Epistemology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (var, req) in &self.0 {
            let body: Vec<String> = req.iter().map(|(k, v)| format!("{k}={v}")).collect();
            writeln!(f, "{var}: {{{}}}", body.join(", "))?;
        }
        Ok(())
    }
}

/// An edge given by endpoint states, as accepted by [`StateGraph::from_parts`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct EdgeParts {
    pub tail: StateMap,
    pub head: StateMap,
    pub mutation: String,
    pub alternatives: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct StateGraph {
    set: MutationSet,
    space: StateSpace,
    vertices: Vec<State>,
    index: HashMap<State, usize>,
    edges: Vec<Edge>,
    outgoing: Vec<Vec<usize>>,
    incoming: Vec<Vec<usize>>,
    epistemology: Epistemology,
    requirements: Vec<Option<Vec<(usize, u8)>>>,
    explored: usize,
}

impl StateGraph {
    fn assemble(
        set: MutationSet,
        space: StateSpace,
        mut vertices: Vec<State>,
        edges: Vec<(State, State, Vec<usize>)>,
        requirements: Vec<Option<Vec<(usize, u8)>>>,
        explored: usize,
    ) -> Self {
        vertices.sort();
        vertices.dedup();
        let index: HashMap<State, usize> =
            vertices.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let mut edges: Vec<Edge> = edges
            .into_iter()
            .map(|(t, h, mut ms)| {
                ms.sort_unstable();
                ms.dedup();
                let names: Vec<String> =
                    ms.iter().map(|&i| space.mutations[i].name.clone()).collect();
                Edge {
                    tail: index[&t],
                    head: index[&h],
                    mutation: names[0].clone(),
                    alternatives: names[1..].to_vec(),
                }
            })
            .collect();
        edges.sort_by_key(|e| (e.tail, e.head));
        let mut outgoing = vec![Vec::new(); vertices.len()];
        let mut incoming = vec![Vec::new(); vertices.len()];
        for (i, e) in edges.iter().enumerate() {
            outgoing[e.tail].push(i);
            incoming[e.head].push(i);
        }
        let epistemology = Epistemology(
            requirements
                .iter()
                .enumerate()
                .filter_map(|(v, req)| {
                    let req = req.as_ref()?;
                    let map = req
                        .iter()
                        .map(|&(w, x)| (space.vars[w].clone(), space.values[w][x as usize].clone()))
                        .collect();
                    Some((space.vars[v].clone(), map))
                })
                .collect(),
        );
        Self {
            set,
            space,
            vertices,
            index,
            edges,
            outgoing,
            incoming,
            epistemology,
            requirements,
            explored,
        }
    }

    /// Assembles a graph from explicit parts, for constructions made
    /// outside the builder. Endpoints become vertices automatically.
    pub fn from_parts(
        set: MutationSet,
        vertices: &[StateMap],
        edges: &[EdgeParts],
        epistemology: &Epistemology,
    ) -> Result<Self, GraphError> {
        let space = StateSpace::new(&set);
        let encode = |m: &StateMap| -> Result<State, GraphError> {
            set.schema().validate_map(m)?;
            Ok(space.encode(m).expect("validated states encode"))
        };
        let mut states = Vec::new();
        for v in vertices {
            states.push(encode(v)?);
        }
        let mut grouped = Vec::new();
        for e in edges {
            let t = encode(&e.tail)?;
            let h = encode(&e.head)?;
            states.push(t.clone());
            states.push(h.clone());
            let ms = std::iter::once(&e.mutation)
                .chain(&e.alternatives)
                .filter_map(|n| space.mutations.iter().position(|m| &m.name == n))
                .collect::<Vec<_>>();
            if !ms.is_empty() {
                grouped.push((t, h, ms));
            }
        }
        let requirements = space
            .vars
            .iter()
            .map(|var| {
                epistemology.get(var).map(|req| {
                    req.iter()
                        .filter_map(|(k, x)| {
                            let w = space.var_index(k)?;
                            Some((w, space.value_index(w, x)?))
                        })
                        .collect()
                })
            })
            .collect();
        let explored = states.len();
        Ok(Self::assemble(set, space, states, grouped, requirements, explored))
    }

    pub fn mutation_set(&self) -> &MutationSet {
        &self.set
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    /// Index of the all-unknown vertex, if the graph has one.
    pub fn root(&self) -> Option<usize> {
        self.index.get(&self.space.root()).copied()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn outgoing(&self, vertex: usize) -> impl Iterator<Item = &Edge> {
        self.outgoing[vertex].iter().map(|&i| &self.edges[i])
    }

    pub fn incoming(&self, vertex: usize) -> impl Iterator<Item = &Edge> {
        self.incoming[vertex].iter().map(|&i| &self.edges[i])
    }

    pub fn vertex_state(&self, vertex: usize) -> StateMap {
        self.space.decode(&self.vertices[vertex])
    }

    pub fn vertex_states(&self) -> Vec<StateMap> {
        self.vertices.iter().map(|s| self.space.decode(s)).collect()
    }

    pub fn render(&self, vertex: usize) -> String {
        self.space.render(&self.vertices[vertex])
    }

    pub(crate) fn state(&self, vertex: usize) -> &State {
        &self.vertices[vertex]
    }

    pub(crate) fn index_of(&self, state: &State) -> Option<usize> {
        self.index.get(state).copied()
    }

    /// Vertex whose state equals `state` on the mutation variables.
    pub fn vertex_of(&self, state: &StateMap) -> Option<usize> {
        self.index_of(&self.space.encode(state)?)
    }

    /// Edge from `tail` to `head`, if any.
    pub fn edge_between(&self, tail: usize, head: usize) -> Option<&Edge> {
        self.outgoing(tail).find(|e| e.head == head)
    }

    pub fn epistemology(&self) -> &Epistemology {
        &self.epistemology
    }

    /// Number of distinct states reached during expansion, before merging.
    pub fn explored_states(&self) -> usize {
        self.explored
    }

    pub(crate) fn strip_state(&self, state: &State) -> State {
        strip(state, &self.requirements)
    }

    /// Resets to `unknown` every mutation variable whose epistemology is
    /// unmet, repeating until nothing changes. Context entries pass through.
    pub fn strip(&self, state: &StateMap) -> StateMap {
        let Some(encoded) = self.space.encode(state) else {
            return state.clone();
        };
        let stripped = self.space.decode(&self.strip_state(&encoded));
        state
            .iter()
            .filter(|(k, _)| self.space.var_index(k).is_none())
            .map(|(k, v)| (k.clone(), v.clone()))
            .chain(stripped)
            .collect()
    }

    /// Whether stripping leaves `state` unchanged.
    pub fn is_epistemically_valid(&self, state: &StateMap) -> bool {
        self.space
            .encode(state)
            .is_some_and(|s| self.strip_state(&s) == s)
    }

    /// Vertices connected to the root ignoring direction.
    fn root_component(&self) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let Some(root) = self.root() else {
            return seen;
        };
        let mut queue = VecDeque::from([root]);
        seen.insert(root);
        while let Some(v) = queue.pop_front() {
            let next = self.outgoing(v).map(|e| e.head).chain(self.incoming(v).map(|e| e.tail));
            for w in next.collect::<Vec<_>>() {
                if seen.insert(w) {
                    queue.push_back(w);
                }
            }
        }
        seen
    }

    fn labeled_component(&self) -> (BTreeSet<StateMap>, BTreeSet<EdgeParts>) {
        let component = self.root_component();
        let vertices = component.iter().map(|&v| self.vertex_state(v)).collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| component.contains(&e.tail))
            .map(|e| EdgeParts {
                tail: self.vertex_state(e.tail),
                head: self.vertex_state(e.head),
                mutation: e.mutation.clone(),
                alternatives: e.alternatives.clone(),
            })
            .collect();
        (vertices, edges)
    }
}

pub(crate) fn strip(state: &State, requirements: &[Option<Vec<(usize, u8)>>]) -> State {
    let mut s = state.0.clone();
    loop {
        let mut changed = false;
        for (var, req) in requirements.iter().enumerate() {
            if s[var] == 0 {
                continue;
            }
            let met = req
                .as_ref()
                .is_some_and(|r| r.iter().all(|&(w, x)| s[w] == x));
            if !met {
                s[var] = 0;
                changed = true;
            }
        }
        if !changed {
            return State(s);
        }
    }
}

/// Whether the root-connected parts of two graphs have the same vertex
/// states and the same labeled edges.
pub fn graph_equiv(a: &StateGraph, b: &StateGraph) -> bool {
    a.labeled_component() == b.labeled_component()
}
