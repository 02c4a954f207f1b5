use std::fmt::Write;

use super::StateGraph;

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering. Vertices are labeled with their known assignments,
/// edges with the primary mutation followed by any alternatives.
pub fn export_dot(graph: &StateGraph) -> String {
    let mut out = String::from("digraph state_graph {\n    rankdir=LR;\n    node [shape=box];\n");
    for v in 0..graph.vertex_count() {
        let label = match graph.render(v) {
            r if r.is_empty() => "∅/unknown".to_string(),
            r => escape(&r).replace(',', "\\n"),
        };
        writeln!(out, "    n{v} [label=\"{label}\"];").unwrap();
    }
    for e in graph.edges() {
        let label = e.mutations().collect::<Vec<_>>().join(" | ");
        writeln!(out, "    n{} -> n{} [label=\"{}\"];", e.tail, e.head, escape(&label)).unwrap();
    }
    out.push_str("}\n");
    out
}

/// Plain-text epistemology table plus lint findings.
pub fn epistemology_report(graph: &StateGraph) -> String {
    let mut out = String::from("epistemology:\n");
    let space = graph.space();
    for var in &space.vars {
        match graph.epistemology().get(var) {
            Some(req) => {
                let body: Vec<String> = req.iter().map(|(k, v)| format!("{k}={v}")).collect();
                writeln!(out, "  {var}: {{{}}}", body.join(", ")).unwrap();
            }
            None => writeln!(out, "  {var}: (none)").unwrap(),
        }
    }
    let lints = lint(graph);
    if !lints.is_empty() {
        out.push_str("warnings:\n");
        for l in lints {
            writeln!(out, "  {l}").unwrap();
        }
    }
    writeln!(out, "vertices: {}\nedges: {}", graph.vertex_count(), graph.edge_count()).unwrap();
    out
}

/// Variables that can never leave `unknown`, and values no chain from the
/// root can reach.
pub fn lint(graph: &StateGraph) -> Vec<String> {
    let space = graph.space();
    let mut out = Vec::new();
    for var in &space.vars {
        if !graph.epistemology().is_knowable(var) {
            out.push(format!("variable `{var}` can never leave unknown"));
        }
    }
    let mut reached = vec![false; graph.vertex_count()];
    let mut stack: Vec<usize> = graph.root().into_iter().collect();
    for &v in &stack {
        reached[v] = true;
    }
    while let Some(v) = stack.pop() {
        for e in graph.outgoing(v) {
            if !reached[e.head] {
                reached[e.head] = true;
                stack.push(e.head);
            }
        }
    }
    for (var_idx, var) in space.vars.iter().enumerate() {
        if !graph.epistemology().is_knowable(var) {
            continue;
        }
        for x in 1..space.values[var_idx].len() as u8 {
            let hit = (0..graph.vertex_count())
                .any(|v| reached[v] && graph.state(v).get(var_idx) == x);
            if !hit {
                out.push(format!(
                    "goal `{var}={}` is unreachable from the root",
                    space.value_name(var_idx, x)
                ));
            }
        }
    }
    out
}
