//! Dense encoding of mutation-variable states.

use std::fmt;

use crate::mutation::{MutationSet, MutationSpec};
use crate::schema::{StateMap, UNKNOWN};

/// One value index per mutation variable, in schema (name) order. Index 0
/// is always `unknown`, so the all-zero state is the root.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct State(pub Box<[u8]>);

impl State {
    pub fn get(&self, var: usize) -> u8 {
        self.0[var]
    }

    pub fn with(&self, var: usize, value: u8) -> State {
        let mut next = self.0.clone();
        next[var] = value;
        State(next)
    }
}

impl fmt::Debug for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "State{:?}", self.0)
    }
}

#[derive(Debug, Clone)]
pub struct CompiledMutation {
    pub name: String,
    pub mutates: Vec<(usize, u8, u8)>,
    pub requires: Vec<(usize, u8)>,
    pub index: usize,
}

impl CompiledMutation {
    /// Out-compatibility over the mutation variables; context requirements
    /// are evaluated separately at search time.
    pub fn out_ok(&self, s: &State) -> bool {
        self.requires.iter().all(|&(v, x)| s.get(v) == x)
            && self.mutates.iter().all(|&(v, from, _)| s.get(v) == from)
    }

    pub fn in_ok(&self, s: &State) -> bool {
        self.mutates.iter().all(|&(v, _, to)| s.get(v) == to) && self.out_ok(&self.rewind(s))
    }

    pub fn apply(&self, s: &State) -> State {
        let mut next = s.0.clone();
        for &(v, _, to) in &self.mutates {
            next[v] = to;
        }
        State(next)
    }

    pub fn rewind(&self, s: &State) -> State {
        let mut prev = s.0.clone();
        for &(v, from, _) in &self.mutates {
            prev[v] = from;
        }
        State(prev)
    }

    pub fn discovers(&self, var: usize) -> bool {
        self.mutates.iter().any(|&(v, from, _)| v == var && from == 0)
    }
}

/// Mutation variables and compiled mutations of one mutation set.
#[derive(Debug, Clone)]
pub struct StateSpace {
    pub vars: Vec<String>,
    pub values: Vec<Vec<String>>,
    pub mutations: Vec<CompiledMutation>,
}

impl StateSpace {
    pub fn new(set: &MutationSet) -> Self {
        let (vars, values): (Vec<String>, Vec<Vec<String>>) = set
            .schema()
            .mutation_variables()
            .map(|v| (v.name.clone(), v.values().unwrap_or_default().to_vec()))
            .unzip();
        let mut space = Self {
            vars,
            values,
            mutations: Vec::new(),
        };
        space.mutations = set
            .mutations()
            .iter()
            .enumerate()
            .map(|(index, m)| space.compile(index, m))
            .collect();
        space
    }

    fn compile(&self, index: usize, m: &MutationSpec) -> CompiledMutation {
        let encode = |var: &str, value: &str| -> Option<(usize, u8)> {
            let v = self.var_index(var)?;
            Some((v, self.value_index(v, value)?))
        };
        CompiledMutation {
            name: m.name.clone(),
            mutates: m
                .mutates
                .iter()
                .filter_map(|(k, t)| {
                    let (v, from) = encode(k, &t.from)?;
                    let (_, to) = encode(k, &t.to)?;
                    Some((v, from, to))
                })
                .collect(),
            requires: m.requires.iter().filter_map(|(k, x)| encode(k, x)).collect(),
            index,
        }
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.binary_search_by(|v| v.as_str().cmp(name)).ok()
    }

    pub fn value_index(&self, var: usize, value: &str) -> Option<u8> {
        self.values[var].iter().position(|x| x == value).map(|i| i as u8)
    }

    pub fn root(&self) -> State {
        State(vec![0; self.vars.len()].into_boxed_slice())
    }

    /// Encodes the mutation-variable part of `map`. Values outside the
    /// enumeration yield `None`.
    pub fn encode(&self, map: &StateMap) -> Option<State> {
        let mut s = self.root();
        for (k, value) in map {
            if let Some(v) = self.var_index(k) {
                s.0[v] = self.value_index(v, value)?;
            }
        }
        Some(s)
    }

    /// Canonical map of non-unknown assignments.
    pub fn decode(&self, s: &State) -> StateMap {
        s.0.iter()
            .enumerate()
            .filter(|(_, &x)| x != 0)
            .map(|(v, &x)| (self.vars[v].clone(), self.values[v][x as usize].clone()))
            .collect()
    }

    /// `var=value` pairs joined by commas; the root renders empty.
    pub fn render(&self, s: &State) -> String {
        self.decode(s)
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn value_name(&self, var: usize, value: u8) -> &str {
        self.values[var].get(value as usize).map_or(UNKNOWN, String::as_str)
    }
}
