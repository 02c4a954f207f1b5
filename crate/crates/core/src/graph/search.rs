use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::StateGraph;
use crate::error::GraphError;
use crate::mutation::{ChainStep, MutationChain};
use crate::schema::StateMap;
use crate::store::NodeRecord;

const UNREACHED: u32 = u32::MAX;

/// Shortest mutation chain from the node's discovered state to a vertex
/// meeting its configured demands.
///
/// The start is the discovered state after stripping. An edge is usable
/// when one of its mutations has its context requirements met by the
/// node's merged view; the smallest such name labels the step. Among the
/// nearest goal vertices the one with the smallest rendering wins, and
/// among equally short chains the lexicographically smallest sequence of
/// mutation names is returned.
pub fn find_chain(graph: &StateGraph, node: &NodeRecord) -> Result<Option<MutationChain>, GraphError> {
    let steps = graph.shortest_steps(&node.discovered, &node.configured, &node.merged());
    match steps {
        Err(state) => Err(GraphError::UnmodeledState {
            node: node.id,
            state,
        }),
        Ok(steps) => Ok(steps.map(|s| MutationChain::new(node.id, s))),
    }
}

impl StateGraph {
    /// Core of [`find_chain`] over plain maps. `Err` carries the rendering
    /// of a start state that is not a vertex.
    pub fn shortest_steps(
        &self,
        discovered: &StateMap,
        goal: &StateMap,
        context: &StateMap,
    ) -> Result<Option<Vec<ChainStep>>, String> {
        let space = self.space();
        let encoded = space.encode(discovered).ok_or_else(|| format!("{discovered:?}"))?;
        let stripped = self.strip_state(&encoded);
        let start = self.index_of(&stripped).ok_or_else(|| space.render(&stripped))?;

        let demands: Vec<(usize, u8)> = match goal
            .iter()
            .filter_map(|(k, v)| space.var_index(k).map(|var| (var, v)))
            .map(|(var, v)| space.value_index(var, v).map(|x| (var, x)))
            .collect::<Option<Vec<_>>>()
        {
            Some(d) => d,
            None => return Ok(None),
        };
        let satisfies = |v: usize| demands.iter().all(|&(var, x)| self.state(v).get(var) == x);
        if satisfies(start) {
            return Ok(Some(Vec::new()));
        }

        let schema = self.mutation_set().schema();
        let labels: Vec<Option<&str>> = self
            .edges()
            .iter()
            .map(|e| {
                e.mutations().find(|name| {
                    self.mutation_set()
                        .get(name)
                        .is_some_and(|m| m.context_met(context, schema))
                })
            })
            .collect();

        let forward = self.distances(start, &labels, true);
        let goal = (0..self.vertex_count())
            .filter(|&v| forward[v] != UNREACHED && satisfies(v))
            .min_by(|&a, &b| forward[a].cmp(&forward[b]).then_with(|| self.render(a).cmp(&self.render(b))));
        let Some(goal) = goal else {
            return Ok(None);
        };

        let backward = self.distances(goal, &labels, false);
        let mut steps = Vec::new();
        let mut at = start;
        while at != goal {
            let (label, head) = self.outgoing[at]
                .iter()
                .filter_map(|&i| {
                    let e = &self.edges()[i];
                    let label = labels[i]?;
                    (backward[e.head] != UNREACHED && backward[e.head] + 1 == backward[at])
                        .then_some((label, e.head))
                })
                .min()
                .expect("a vertex on a shortest path has a successor on it");
            steps.push(ChainStep {
                mutation: label.to_string(),
                pre: self.vertex_state(at),
                post: self.vertex_state(head),
            });
            at = head;
        }
        Ok(Some(steps))
    }

    /// Unit-weight Dijkstra over usable edges, forward or reversed.
    fn distances(&self, source: usize, labels: &[Option<&str>], forward: bool) -> Vec<u32> {
        let mut dist = vec![UNREACHED; self.vertex_count()];
        let mut heap = BinaryHeap::from([Reverse((0u32, source))]);
        dist[source] = 0;
        while let Some(Reverse((d, v))) = heap.pop() {
            if d > dist[v] {
                continue;
            }
            let adjacent = if forward { &self.outgoing[v] } else { &self.incoming[v] };
            for &i in adjacent {
                if labels[i].is_none() {
                    continue;
                }
                let e = &self.edges()[i];
                let w = if forward { e.head } else { e.tail };
                if d + 1 < dist[w] {
                    dist[w] = d + 1;
                    heap.push(Reverse((d + 1, w)));
                }
            }
        }
        dist
    }
}
