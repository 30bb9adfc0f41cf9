//! Cached Gauss–Legendre rules on `[-1, 1]`.

use std::num::NonZeroUsize;
use std::sync::OnceLock;

use gauss_quad::legendre::GaussLegendre;

const MAX_POINTS: usize = 16;

static RULES: OnceLock<Vec<Vec<(f64, f64)>>> = OnceLock::new();

/// Nodes and weights of the `n`-point rule (exact for degree `2n − 1`).
pub fn gauss_legendre(n: usize) -> &'static [(f64, f64)] {
    let rules = RULES.get_or_init(|| {
        (1..=MAX_POINTS)
            .map(|k| {
                let mut pairs: Vec<(f64, f64)> = GaussLegendre::new(NonZeroUsize::new(k).unwrap())
                    .as_node_weight_pairs()
                    .to_vec();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                pairs
            })
            .collect()
    });
    let n = n.clamp(1, MAX_POINTS);
    &rules[n - 1]
}

/// Tensor rule on `[-1, 1]²` as `((s, t), w)`.
pub fn tensor_rule(n: usize) -> impl Iterator<Item = ((f64, f64), f64)> {
    let g = gauss_legendre(n);
    g.iter()
        .flat_map(move |&(t, wt)| g.iter().map(move |&(s, ws)| ((s, t), ws * wt)))
}
