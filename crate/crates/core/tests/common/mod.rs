#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stablerules_core::data::{ColumnKind, FeatureMatrix, LabelVector};
use stablerules_core::mining::{mine_class_rules, rule_rank_cmp, MiningConfig, Rule};

/// A one-hot database whose label depends on the first three items, plus the
/// strongest mined class rules (at most `max_rules`, both classes mixed).
pub struct RuleInstance {
    pub x: FeatureMatrix,
    pub y: LabelVector,
    pub rules: Vec<Rule>,
}

pub fn rule_instance(seed: u64, n: usize, n_items: usize, max_rules: usize) -> RuleInstance {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, n_items, |_, _| if r.random::<f64>() < 0.4 { 1.0 } else { 0.0 });
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let s = x[(i, 0)] + x[(i, 1)] - x[(i, 2)] + r.random_range(-0.6..0.6);
            if s > 0.5 { 1.0 } else { -1.0 }
        })
        .collect();
    let names = (0..n_items).map(|j| format!("I{j}")).collect();
    let x = FeatureMatrix::new(x, names, vec![ColumnKind::Binary; n_items]).unwrap();
    let y = LabelVector::binary(y).unwrap();
    let cfg = MiningConfig {
        min_support: 0.05,
        min_confidence: 0.55,
        max_antecedent_len: 2,
    };
    let (pos, neg) = mine_class_rules(&x, &y, &cfg).unwrap();
    let mut pos = pos;
    let mut neg = neg;
    pos.sort_by(rule_rank_cmp);
    neg.sort_by(rule_rank_cmp);
    let mut rules = Vec::new();
    let (mut a, mut b) = (pos.into_iter(), neg.into_iter());
    while rules.len() < max_rules {
        let before = rules.len();
        if let Some(rule) = a.next() {
            rules.push(rule);
        }
        if rules.len() < max_rules {
            if let Some(rule) = b.next() {
                rules.push(rule);
            }
        }
        if rules.len() == before {
            break;
        }
    }
    RuleInstance { x, y, rules }
}
