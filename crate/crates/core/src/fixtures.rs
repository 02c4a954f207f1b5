//! Shipped mutation sets.

use crate::mutation::{MutationSet, MutationSpec};
use crate::schema::{StateSchema, VariableSpec};
use crate::specfile::parse_spec;

pub const LAYERCAKE_LITE_YAML: &str = include_str!("../specs/layercake-lite.yaml");
pub const POWERSET_YAML: &str = include_str!("../specs/powerset.yaml");

/// Power plus node run-state lifecycle.
pub fn layercake_lite() -> MutationSet {
    parse_spec(LAYERCAKE_LITE_YAML, "layercake-lite.yaml").expect("shipped spec is valid")
}

/// Power control through IPMI or Redfish.
pub fn power_set() -> MutationSet {
    parse_spec(POWERSET_YAML, "powerset.yaml").expect("shipped spec is valid")
}

/// `vars` mutation variables with `values` non-unknown values each. Every
/// value is directly discoverable and values rotate in a cycle; rotating
/// the last value back to the first requires the next variable to hold its
/// second value.
pub fn synthetic(vars: usize, values: usize) -> MutationSet {
    let names: Vec<String> = (0..values).map(|i| format!("s{i}")).collect();
    let schema = StateSchema::new((0..vars).map(|v| {
        VariableSpec::mutation(
            &format!("v{v}"),
            std::iter::once("unknown".to_string()).chain(names.iter().cloned()),
        )
    }))
    .expect("synthetic schema is valid");
    let mut mutations = Vec::new();
    for v in 0..vars {
        let var = format!("v{v}");
        for (i, value) in names.iter().enumerate() {
            mutations.push(MutationSpec::new(&format!("discover_{var}_{value}")).mutates(&var, "unknown", value));
            let next = &names[(i + 1) % names.len()];
            if next == value {
                continue;
            }
            let mut m = MutationSpec::new(&format!("rotate_{var}_{value}")).mutates(&var, value, next);
            if i + 1 == names.len() && vars > 1 && values > 1 {
                m = m.requires(&format!("v{}", (v + 1) % vars), &names[1]);
            }
            mutations.push(m);
        }
    }
    MutationSet::new(schema, mutations).expect("synthetic mutations are valid")
}
