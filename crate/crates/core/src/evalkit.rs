//! Single-query retrieval evaluation: ranking, CMC top-k and mAP.
//!
//! Gallery entries sharing both identity and camera with the query are
//! removed before ranking; same identity under another camera is a match.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::diffcore::{Real, Tensor};
use crate::error::Result;
use crate::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Meta {
    pub identity: usize,
    pub camera: usize,
}

/// Ranked gallery for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedQuery {
    /// Non-excluded gallery indices by ascending distance, ties by index.
    pub order: Vec<usize>,
    /// `matches[r]` is true when `order[r]` is a correct match.
    pub matches: Vec<bool>,
}

impl RankedQuery {
    /// 1-based rank of the first match.
    pub fn first_match_rank(&self) -> Option<usize> {
        self.matches.iter().position(|&m| m).map(|p| p + 1)
    }

    /// Mean of precision@r over the ranks of the matches. Kept as an exact
    /// fraction while it fits in 128 bits so small cases round only once.
    pub fn average_precision(&self) -> f64 {
        let mut hits = 0u128;
        let mut float_acc = 0.0;
        let mut exact = Some((0u128, 1u128));
        for (r, &m) in self.matches.iter().enumerate() {
            if m {
                hits += 1;
                let rank = r as u128 + 1;
                float_acc += hits as f64 / rank as f64;
                exact = exact.and_then(|(n, d)| add_fraction(n, d, hits, rank));
            }
        }
        if hits == 0 {
            return 0.0;
        }
        match exact.and_then(|(n, d)| Some(reduce(n, d.checked_mul(hits)?))) {
            Some((n, d)) => n as f64 / d as f64,
            None => float_acc / hits as f64,
        }
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn reduce(n: u128, d: u128) -> (u128, u128) {
    let g = gcd(n, d).max(1);
    (n / g, d / g)
}

fn add_fraction(n1: u128, d1: u128, n2: u128, d2: u128) -> Option<(u128, u128)> {
    let g = gcd(d1, d2);
    let d = (d1 / g).checked_mul(d2)?;
    let n = n1.checked_mul(d2 / g)?.checked_add(n2.checked_mul(d1 / g)?)?;
    Some(reduce(n, d))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RankingTable {
    pub rows: Vec<RankedQuery>,
    /// Queries dropped because no valid gallery entry or no match remained.
    pub skipped: usize,
}

fn euclidean<T: Real>(a: &[T], b: &[T]) -> f64 {
    Float::sqrt(a.iter().zip(b).map(|(&x, &y)| Float::powi(x.f64() - y.f64(), 2)).sum::<f64>())
}

/// Ranks `gallery` (`[G, D]`) for one query. `None` when exclusion leaves
/// nothing to rank.
pub fn rank_gallery<T: Real>(query: &[T], gallery: &Tensor<T>, query_meta: Meta, gallery_meta: &[Meta]) -> Option<RankedQuery> {
    let dim = query.len();
    let mut scored: Vec<(f64, usize)> = gallery
        .data()
        .chunks(dim)
        .zip(gallery_meta)
        .enumerate()
        .filter(|(_, (_, m))| !(m.identity == query_meta.identity && m.camera == query_meta.camera))
        .map(|(i, (row, _))| (euclidean(query, row), i))
        .collect();
    if scored.is_empty() {
        return None;
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let order: Vec<usize> = scored.iter().map(|&(_, i)| i).collect();
    let matches = order.iter().map(|&i| gallery_meta[i].identity == query_meta.identity).collect();
    Some(RankedQuery { order, matches })
}

/// Ranks every query; rows without any match are skipped and counted.
pub fn build_table<T: Real>(queries: &Tensor<T>, query_meta: &[Meta], gallery: &Tensor<T>, gallery_meta: &[Meta]) -> RankingTable {
    let dim = queries.dim(1);
    let mut table = RankingTable::default();
    for (q, &meta) in queries.data().chunks(dim).zip(query_meta) {
        match rank_gallery(q, gallery, meta, gallery_meta) {
            Some(row) if row.matches.iter().any(|&m| m) => table.rows.push(row),
            _ => table.skipped += 1,
        }
    }
    table
}

/// Fraction of evaluated queries whose first match is within the top `k`.
pub fn cmc_topk(table: &RankingTable, k: usize) -> f64 {
    if table.rows.is_empty() {
        return 0.0;
    }
    let hit = table.rows.iter().filter(|r| r.first_match_rank().is_some_and(|p| p <= k)).count();
    hit as f64 / table.rows.len() as f64
}

pub fn mean_average_precision(table: &RankingTable) -> f64 {
    if table.rows.is_empty() {
        return 0.0;
    }
    table.rows.iter().map(RankedQuery::average_precision).sum::<f64>() / table.rows.len() as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub cmc1: f64,
    pub cmc5: f64,
    pub cmc10: f64,
    pub map: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

impl EvalReport {
    pub fn from_table(table: &RankingTable) -> Self {
        Self {
            cmc1: cmc_topk(table, 1),
            cmc5: cmc_topk(table, 5),
            cmc10: cmc_topk(table, 10),
            map: mean_average_precision(table),
            evaluated: table.rows.len(),
            skipped: table.skipped,
        }
    }

    fn mean(reports: &[EvalReport]) -> Self {
        let n = reports.len().max(1) as f64;
        let avg = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Self {
            cmc1: avg(|r| r.cmc1),
            cmc5: avg(|r| r.cmc5),
            cmc10: avg(|r| r.cmc10),
            map: avg(|r| r.map),
            evaluated: reports.iter().map(|r| r.evaluated).sum(),
            skipped: reports.iter().map(|r| r.skipped).sum(),
        }
    }
}

pub fn evaluate<T: Real>(queries: &Tensor<T>, query_meta: &[Meta], gallery: &Tensor<T>, gallery_meta: &[Meta]) -> EvalReport {
    EvalReport::from_table(&build_table(queries, query_meta, gallery, gallery_meta))
}

/// One random probe/gallery split: for each identity seen under at least
/// two cameras, one probe image and one gallery image from a different
/// camera. Returns `(probe indices, gallery indices)`.
pub fn single_shot_split(meta: &[Meta], rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let mut by_id: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, m) in meta.iter().enumerate() {
        by_id.entry(m.identity).or_default().push(i);
    }
    let (mut probes, mut gallery) = (Vec::new(), Vec::new());
    for members in by_id.values() {
        let Some(&probe) = members.choose(rng) else { continue };
        let others: Vec<usize> = members.iter().copied().filter(|&j| meta[j].camera != meta[probe].camera).collect();
        if let Some(&g) = others.choose(rng) {
            probes.push(probe);
            gallery.push(g);
        }
    }
    (probes, gallery)
}

/// Averages metrics over `trials` random single-shot splits; trial `t` uses
/// its own generator seeded with `seed + t`.
pub fn repeated_split_eval<T: Real>(embeddings: &Tensor<T>, meta: &[Meta], trials: usize, seed: u64) -> Result<EvalReport> {
    let rows = embeddings.unstack();
    let mut reports = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = Rng::seed_from_u64(seed.wrapping_add(t as u64));
        let (p, g) = single_shot_split(meta, &mut rng);
        if p.is_empty() {
            continue;
        }
        let pick = |idx: &[usize]| -> Result<(Tensor<T>, Vec<Meta>)> {
            let t: Vec<Tensor<T>> = idx.iter().map(|&i| rows[i].clone()).collect();
            Ok((Tensor::stack(&t)?, idx.iter().map(|&i| meta[i]).collect()))
        };
        let (qe, qm) = pick(&p)?;
        let (ge, gm) = pick(&g)?;
        reports.push(evaluate(&qe, &qm, &ge, &gm));
    }
    Ok(EvalReport::mean(&reports))
}

/// Expected mAP of a ranking that ignores the embeddings entirely,
/// estimated by shuffling each row's candidates `trials` times.
pub fn random_ranking_map(table: &RankingTable, trials: usize, rng: &mut Rng) -> f64 {
    if table.rows.is_empty() || trials == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for row in &table.rows {
        let mut m = row.matches.clone();
        for _ in 0..trials {
            m.shuffle(rng);
            total += RankedQuery { order: Vec::new(), matches: m.clone() }.average_precision();
        }
    }
    total / (table.rows.len() * trials) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn row(matches: &[bool]) -> RankedQuery {
        RankedQuery { order: (0..matches.len()).collect(), matches: matches.to_vec() }
    }

    #[test]
    fn correct_match_ranked_first() {
        let g = Tensor::<f64>::from_f64(&[2, 1], &[2.0, 1.0]).unwrap();
        let meta = [Meta { identity: 9, camera: 1 }, Meta { identity: 3, camera: 1 }];
        let r = rank_gallery(&[0.0], &g, Meta { identity: 3, camera: 0 }, &meta).unwrap();
        assert_eq!(r.order, vec![1, 0]);
        assert_eq!(r.first_match_rank(), Some(1));
    }

    #[test]
    fn same_camera_same_identity_is_excluded() {
        let g = Tensor::<f64>::from_f64(&[3, 1], &[0.0, 1.0, 2.0]).unwrap();
        let meta = [Meta { identity: 3, camera: 0 }, Meta { identity: 3, camera: 1 }, Meta { identity: 4, camera: 0 }];
        let r = rank_gallery(&[0.0], &g, Meta { identity: 3, camera: 0 }, &meta).unwrap();
        assert_eq!(r.order, vec![1, 2]);
        assert!(rank_gallery(&[0.0], &g.unstack()[0].clone().reshape(&[1, 1]).unwrap(), Meta { identity: 3, camera: 0 }, &meta[..1]).is_none());
    }

    #[test]
    fn distance_ties_keep_index_order() {
        let g = Tensor::<f64>::from_f64(&[3, 1], &[1.0, -1.0, 1.0]).unwrap();
        let meta = [Meta { identity: 1, camera: 1 }; 3];
        let r = rank_gallery(&[0.0], &g, Meta { identity: 1, camera: 0 }, &meta).unwrap();
        assert_eq!(r.order, vec![0, 1, 2]);
    }

    #[test]
    fn cmc_by_hand() {
        let t = RankingTable { rows: vec![row(&[true, false, false]), row(&[false, false, true])], skipped: 0 };
        assert_eq!(cmc_topk(&t, 1), 0.5);
        assert_eq!(cmc_topk(&t, 2), 0.5);
        assert_eq!(cmc_topk(&t, 3), 1.0);
        let all = RankingTable { rows: vec![row(&[true, false]); 4], skipped: 0 };
        assert_eq!(cmc_topk(&all, 1), 1.0);
    }

    #[test]
    fn average_precision_by_hand() {
        let mut single = vec![false; 10];
        single[0] = true;
        assert_eq!(row(&single).average_precision(), 1.0);
        assert_eq!(row(&[true, false, true]).average_precision(), 5.0 / 6.0);
        let mut last = vec![false; 10];
        last[9] = true;
        let ap = row(&last).average_precision();
        assert_eq!(ap, 0.1);
    }

    #[test]
    fn random_ranking_oracle_matches_closed_form() {
        // one match among n candidates: E[AP] = H_n / n
        let n = 6;
        let mut m = vec![false; n];
        m[2] = true;
        let t = RankingTable { rows: vec![row(&m)], skipped: 0 };
        let harmonic: f64 = (1..=n).map(|k| 1.0 / k as f64).sum();
        let est = random_ranking_map(&t, 20_000, &mut Rng::seed_from_u64(4));
        assert!((est - harmonic / n as f64).abs() < 0.01, "{est}");
    }

    #[test]
    fn single_shot_split_uses_distinct_cameras() {
        let meta: Vec<Meta> = (0..12).map(|i| Meta { identity: i / 4, camera: i % 2 }).collect();
        let (p, g) = single_shot_split(&meta, &mut Rng::seed_from_u64(2));
        assert_eq!(p.len(), 3);
        for (a, b) in p.iter().zip(&g) {
            assert_eq!(meta[*a].identity, meta[*b].identity);
            assert_ne!(meta[*a].camera, meta[*b].camera);
        }
    }
}
