//! Per-subgroup benchmark selection by chain score.

use std::collections::BTreeMap;

use crate::domain::AmtInstance;

/// Sort key: higher chain score first, then smaller content hash.
fn rank_order(a: &(f64, String), b: &(f64, String)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1))
}

/// Keeps the top `min(cap, N_c)` instances of every subgroup `c` by chain
/// score. Output is grouped by subgroup label (ascending), each group in
/// rank order.
pub fn select_benchmark(instances: Vec<AmtInstance>, cap: usize) -> Vec<AmtInstance> {
    let mut by_class: BTreeMap<String, Vec<((f64, String), AmtInstance)>> = BTreeMap::new();
    for inst in instances {
        let key = (inst.chain_score, inst.content_hash());
        by_class.entry(inst.target_group.level2.clone()).or_default().push((key, inst));
    }
    let mut out = Vec::new();
    for (_, mut class) in by_class {
        class.sort_by(|a, b| rank_order(&a.0, &b.0));
        out.extend(class.into_iter().take(cap).map(|(_, i)| i));
    }
    out
}

/// Per-subgroup counts before and after selection.
pub fn class_sizes(instances: &[AmtInstance]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for i in instances {
        *m.entry(i.target_group.level2.clone()).or_default() += 1;
    }
    m
}
