//! Graphviz rendering of a model's information-source graph.

use std::fmt::Write;

use crate::learn::FpnModel;

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// One node per variable (`n{i}`, labelled by name) and one arc `j -> i` for
/// every source `j` of node `i`, ordered by `(i, j)`.
pub fn to_dot(model: &FpnModel) -> String {
    let mut out = String::from("digraph fpn {\n");
    for (i, name) in model.schema().names().iter().enumerate() {
        writeln!(out, "  n{i} [label={}];", quote(name)).unwrap();
    }
    for (j, i) in model.arcs() {
        writeln!(out, "  n{j} -> n{i};").unwrap();
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, Schema};
    use crate::dist::CondSpec;
    use crate::learn::FallbackPolicy;

    fn model(specs: &[CondSpec]) -> FpnModel {
        let schema = Schema::new(vec!["a".into(), "b \"q\"".into()], vec![2, 2]).unwrap();
        let d = Dataset::new(schema, vec![vec![0, 1], vec![1, 1]]).unwrap();
        FpnModel::from_specs(&d, specs, FallbackPolicy::Marginal).unwrap()
    }

    #[test]
    fn edgeless_has_nodes_only() {
        let dot = to_dot(&model(&[CondSpec::empty(0), CondSpec::empty(1)]));
        assert_eq!(dot, "digraph fpn {\n  n0 [label=\"a\"];\n  n1 [label=\"b \\\"q\\\"\"];\n}\n");
    }

    #[test]
    fn mutual_arcs_are_two_edges() {
        let dot = to_dot(&model(&[CondSpec::new(0, [1]).unwrap(), CondSpec::new(1, [0]).unwrap()]));
        assert!(dot.contains("  n1 -> n0;\n  n0 -> n1;\n"));
    }
}
