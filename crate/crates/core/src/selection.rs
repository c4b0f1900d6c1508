//! Sensor selection strategies and the reconstruction error metric.

use std::fmt;

use ndarray::ArrayView2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{geodesic_distances, WeightedGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    High,
    Middle,
    Low,
}

/// Serialized by name: `random`, `maximin`, `fossa_topk`, `fossa_high`,
/// `fossa_middle`, `fossa_low`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    Random,
    Maximin,
    FossaTopk,
    FossaBand(Band),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Random => write!(f, "random"),
            Strategy::Maximin => write!(f, "maximin"),
            Strategy::FossaTopk => write!(f, "fossa_topk"),
            Strategy::FossaBand(Band::High) => write!(f, "fossa_high"),
            Strategy::FossaBand(Band::Middle) => write!(f, "fossa_middle"),
            Strategy::FossaBand(Band::Low) => write!(f, "fossa_low"),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "random" => Strategy::Random,
            "maximin" => Strategy::Maximin,
            "fossa_topk" => Strategy::FossaTopk,
            "fossa_high" => Strategy::FossaBand(Band::High),
            "fossa_middle" => Strategy::FossaBand(Band::Middle),
            "fossa_low" => Strategy::FossaBand(Band::Low),
            other => return Err(Error::invalid("strategy", format!("unknown strategy `{other}`"))),
        })
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSpec {
    pub strategy: Strategy,
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    /// First node for maximin.
    #[serde(default)]
    pub start: usize,
}

fn check_budget(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::invalid("budget", format!("must lie in 1..={n}, got {k}")));
    }
    Ok(())
}

/// Uniform sample of `k` of `n` sensors without replacement, ascending.
pub fn select_random(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    check_budget(n, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = rand::seq::index::sample(&mut rng, n, k).into_vec();
    out.sort_unstable();
    Ok(out)
}

/// Greedy farthest-point selection on geodesic distances, in pick order.
/// Ties go to the lowest index.
pub fn select_maximin(graph: &WeightedGraph, k: usize, start: usize) -> Result<Vec<usize>> {
    let n = graph.node_count();
    check_budget(n, k)?;
    if start >= n {
        return Err(Error::IndexOutOfRange {
            context: "maximin start",
            index: start,
            len: n,
        });
    }
    let unreachable = graph.unreachable_from(start);
    if !unreachable.is_empty() {
        return Err(Error::Disconnected { nodes: unreachable });
    }
    let mut chosen = vec![start];
    let mut taken = vec![false; n];
    taken[start] = true;
    let mut min_dist = geodesic_distances(graph, start)?;
    while chosen.len() < k {
        let mut best: Option<usize> = None;
        for j in 0..n {
            if !taken[j] && best.is_none_or(|b| min_dist[j] > min_dist[b]) {
                best = Some(j);
            }
        }
        let c = best.expect("budget below node count");
        chosen.push(c);
        taken[c] = true;
        for (m, d) in min_dist.iter_mut().zip(geodesic_distances(graph, c)?) {
            *m = m.min(d);
        }
    }
    Ok(chosen)
}

/// Indices ordered by descending score, ties by index.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Contiguous window of `k` ranks: the top, the bottom, or centred at offset
/// `(N - k) / 2`. Output is ascending by index.
pub fn select_by_rank(scores: &[f64], k: usize, band: Band) -> Result<Vec<usize>> {
    let n = scores.len();
    check_budget(n, k)?;
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite {
            context: "ranking score",
            location: format!("sensor {i}"),
        });
    }
    let order = rank_descending(scores);
    let offset = match band {
        Band::High => 0,
        Band::Middle => (n - k) / 2,
        Band::Low => n - k,
    };
    let mut out = order[offset..offset + k].to_vec();
    out.sort_unstable();
    Ok(out)
}

/// Everything a strategy may need.
pub struct SelectionContext<'a> {
    pub body_graph: &'a WeightedGraph,
    /// Imputed importance, one per body node.
    pub scores: Option<&'a [f64]>,
}

pub fn select(spec: &SelectionSpec, ctx: &SelectionContext<'_>) -> Result<Vec<usize>> {
    let n = ctx.body_graph.node_count();
    let need_scores = || {
        ctx.scores
            .ok_or_else(|| Error::invalid("strategy", format!("{} needs importance scores", spec.strategy)))
    };
    match spec.strategy {
        Strategy::Random => select_random(n, spec.budget, spec.seed),
        Strategy::Maximin => {
            let mut s = select_maximin(ctx.body_graph, spec.budget, spec.start)?;
            s.sort_unstable();
            Ok(s)
        }
        Strategy::FossaTopk => select_by_rank(need_scores()?, spec.budget, Band::High),
        Strategy::FossaBand(b) => select_by_rank(need_scores()?, spec.budget, b),
    }
}

/// `||u_hat - u|| / ||u||` over all nodes and frames.
pub fn relative_error(u_hat: ArrayView2<'_, f64>, u: ArrayView2<'_, f64>) -> Result<f64> {
    if u_hat.dim() != u.dim() {
        return Err(Error::invalid(
            "relative error",
            format!("shape {:?} does not match {:?}", u_hat.dim(), u.dim()),
        ));
    }
    let den = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num = u_hat
        .iter()
        .zip(u.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::{prop, prop_assert, prop_assume, proptest};

    #[test]
    fn random_selection() {
        assert_eq!(select_random(5, 5, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(select_random(50, 7, 3).unwrap(), select_random(50, 7, 3).unwrap());
        assert!(select_random(3, 4, 0).is_err());
        assert!(select_random(3, 0, 0).is_err());
    }

    #[test]
    fn random_selection_is_uniform() {
        let draws = 10_000;
        let mut counts = [0usize; 4];
        for seed in 0..draws {
            counts[select_random(4, 1, seed).unwrap()[0]] += 1;
        }
        let expected = draws as f64 / 4.0;
        let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn maximin_examples() {
        let g = WeightedGraph::path(5, 1.0).unwrap();
        assert_eq!(select_maximin(&g, 1, 2).unwrap(), vec![2]);
        assert_eq!(select_maximin(&g, 2, 0).unwrap(), vec![0, 4]);
        // brute force over second candidates
        let d0 = geodesic_distances(&g, 0).unwrap();
        let best = (1..5).max_by(|&a, &b| d0[a].total_cmp(&d0[b]).then(b.cmp(&a))).unwrap();
        assert_eq!(best, 4);
        assert_eq!(select_maximin(&g, 3, 0).unwrap(), vec![0, 4, 2]);
        let split = WeightedGraph::from_edges(4, &[(0, 1, 1.0), (2, 3, 1.0)]).unwrap();
        assert!(matches!(select_maximin(&split, 2, 0), Err(Error::Disconnected { nodes }) if nodes == vec![2, 3]));
    }

    #[test]
    fn maximin_greedy_certificate() {
        let mesh = crate::geometry::sphere_mesh(40, 1.0).unwrap();
        let g = crate::geometry::build_edge_graph(&mesh).unwrap();
        let order = select_maximin(&g, 12, 3).unwrap();
        let dist: Vec<Vec<f64>> = (0..40).map(|i| geodesic_distances(&g, i).unwrap()).collect();
        for step in 1..order.len() {
            let chosen = &order[..step];
            let md = |j: usize| chosen.iter().map(|&c| dist[c][j]).fold(f64::INFINITY, f64::min);
            let c = order[step];
            for j in (0..40).filter(|j| !chosen.contains(j)) {
                assert!(md(c) >= md(j));
            }
        }
    }

    #[test]
    fn rank_examples() {
        assert_eq!(select_by_rank(&[3.0, 1.0, 2.0], 2, Band::High).unwrap(), vec![0, 2]);
        for b in [Band::High, Band::Middle, Band::Low] {
            assert_eq!(select_by_rank(&[3.0, 1.0, 2.0], 3, b).unwrap(), vec![0, 1, 2]);
        }
        assert_eq!(select_by_rank(&[3.0, 1.0, 2.0], 1, Band::Middle).unwrap(), vec![2]);
        assert_eq!(select_by_rank(&[3.0, 1.0, 2.0], 1, Band::Low).unwrap(), vec![1]);
        // ties resolved by index
        assert_eq!(select_by_rank(&[1.0, 1.0, 1.0], 1, Band::High).unwrap(), vec![0]);
    }

    #[test]
    fn paper_scale_split() {
        let scores: Vec<f64> = (0..352).map(|i| ((i * 7919) % 352) as f64).collect();
        let high = select_by_rank(&scores, 252, Band::High).unwrap();
        let order = rank_descending(&scores);
        let mut top: Vec<usize> = order[..252].to_vec();
        top.sort();
        assert_eq!(high, top);
        assert_eq!(high.len(), 252);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [
            Strategy::Random,
            Strategy::Maximin,
            Strategy::FossaTopk,
            Strategy::FossaBand(Band::High),
            Strategy::FossaBand(Band::Middle),
            Strategy::FossaBand(Band::Low),
        ] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{s}\""));
            assert_eq!(serde_json::from_str::<Strategy>(&json).unwrap(), s);
        }
        assert!(serde_json::from_str::<Strategy>("\"best\"").is_err());
    }

    #[test]
    fn relative_error_examples() {
        let u = array![[3.0], [4.0]];
        assert_eq!(relative_error(u.view(), u.view()).unwrap(), 0.0);
        assert_eq!(relative_error(Array2::zeros((2, 1)).view(), u.view()).unwrap(), 1.0);
        assert!((relative_error(array![[3.0], [0.0]].view(), u.view()).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(
            relative_error(u.view(), Array2::zeros((2, 1)).view()),
            Err(Error::ZeroReference)
        ));
    }

    proptest! {
        #[test]
        fn bands_are_disjoint(scores in prop::collection::vec(-10.0f64..10.0, 3..60), frac in 0.05f64..0.33) {
            let n = scores.len();
            let k = ((n as f64 * frac) as usize).clamp(1, n / 3);
            let h = select_by_rank(&scores, k, Band::High).unwrap();
            let m = select_by_rank(&scores, k, Band::Middle).unwrap();
            let l = select_by_rank(&scores, k, Band::Low).unwrap();
            for i in &h {
                prop_assert!(!m.contains(i) && !l.contains(i));
            }
            for i in &m {
                prop_assert!(!l.contains(i));
            }
        }

        #[test]
        fn relative_error_scaling(vals in prop::collection::vec(-5.0f64..5.0, 4), noise in prop::collection::vec(-1.0f64..1.0, 4), alpha in 0.1f64..10.0) {
            let u = Array2::from_shape_vec((2, 2), vals).unwrap();
            prop_assume!(u.iter().any(|x| x.abs() > 1e-3));
            let uh = &u + &Array2::from_shape_vec((2, 2), noise).unwrap();
            let base = relative_error(uh.view(), u.view()).unwrap();
            let both = relative_error((&uh * alpha).view(), (&u * alpha).view()).unwrap();
            prop_assert!((base - both).abs() <= 1e-12 * (1.0 + base));
            let only = relative_error((&uh * alpha).view(), u.view()).unwrap();
            let direct = (&uh * alpha - &u).iter().map(|x| x * x).sum::<f64>().sqrt() / u.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((only - direct).abs() <= 1e-12 * (1.0 + direct));
        }
    }
}
