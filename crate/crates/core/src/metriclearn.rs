//! PK batch construction and the batch-hard triplet loss.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::diffcore::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::Rng;

pub const DEFAULT_MARGIN: f64 = 0.5;
/// Added under the square root so the distance gradient stays finite.
pub const DIST_EPS: f64 = 1e-12;

/// `P` identities with `K` samples each.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletBatch<T: Real> {
    pub images: Tensor<T>,
    pub identities: Vec<usize>,
    pub cameras: Vec<usize>,
}

impl<T: Real> TripletBatch<T> {
    /// Materialises the samples picked by [`pk_batch_sample`].
    pub fn gather(indices: &[usize], identities: &[usize], cameras: &[usize], mut image: impl FnMut(usize) -> Result<Tensor<T>>) -> Result<Self> {
        let images: Vec<Tensor<T>> = indices.iter().map(|&i| image(i)).collect::<Result<_>>()?;
        Ok(Self {
            images: Tensor::stack(&images)?,
            identities: indices.iter().map(|&i| identities[i]).collect(),
            cameras: indices.iter().map(|&i| cameras[i]).collect(),
        })
    }
}

/// Picks `p` distinct identities, then `k` sample indices for each.
/// Identities with fewer than `k` samples are drawn with replacement.
///
/// `identities[i]` is the identity of sample `i`. RNG use: one partial
/// Fisher-Yates pass over the sorted identity list, then per chosen identity
/// either a partial shuffle of its samples or `k` uniform draws.
pub fn pk_batch_sample(identities: &[usize], p: usize, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if p == 0 || k == 0 {
        return Err(Error::config("pk", "P and K must be positive"));
    }
    let mut by_id: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &id) in identities.iter().enumerate() {
        by_id.entry(id).or_default().push(i);
    }
    if by_id.len() < p {
        return Err(Error::config("p", format!("need {p} identities, dataset has {}", by_id.len())));
    }
    let mut ids: Vec<usize> = by_id.keys().copied().collect();
    partial_shuffle(&mut ids, p, rng);
    let mut out = Vec::with_capacity(p * k);
    for id in &ids[..p] {
        let mut members = by_id[id].clone();
        if members.len() >= k {
            partial_shuffle(&mut members, k, rng);
            out.extend_from_slice(&members[..k]);
        } else {
            for _ in 0..k {
                out.push(members[rng.gen_range(0..members.len())]);
            }
        }
    }
    Ok(out)
}

fn partial_shuffle<X>(v: &mut [X], count: usize, rng: &mut Rng) {
    for i in 0..count.min(v.len()) {
        let j = rng.gen_range(i..v.len());
        v.swap(i, j);
    }
}

/// Symmetric matrix of Euclidean distances with an exact zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix<T> {
    pub n: usize,
    pub d: Vec<T>,
}

impl<T: Real> DistanceMatrix<T> {
    pub fn get(&self, i: usize, j: usize) -> T {
        self.d[i * self.n + j]
    }
}

/// `d(i, j) = sqrt(max(‖e_i - e_j‖², 0) + 1e-12)` off the diagonal.
pub fn pairwise_euclidean<T: Real>(emb: &Tensor<T>) -> Result<DistanceMatrix<T>> {
    emb.expect_rank("pairwise_euclidean", 2)?;
    let (n, dim) = (emb.dim(0), emb.dim(1));
    let eps = T::of(DIST_EPS);
    let rows: Vec<&[T]> = emb.data().chunks(dim).collect();
    let mut d = vec![T::zero(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            let sq: T = rows[i].iter().zip(rows[j]).map(|(&a, &b)| (a - b) * (a - b)).sum();
            let v = (sq.max(T::zero()) + eps).sqrt();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    Ok(DistanceMatrix { n, d })
}

/// Hardest positive and negative chosen for one anchor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HardPair {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Lowest index wins ties among equally hard candidates.
pub fn mine_batch_hard<T: Real>(d: &DistanceMatrix<T>, labels: &[usize]) -> Result<Vec<HardPair>> {
    if labels.len() != d.n {
        return Err(Error::shape("batch_hard_triplet", format!("{} labels for {} samples", labels.len(), d.n)));
    }
    (0..d.n)
        .map(|a| {
            let mut pos: Option<usize> = None;
            let mut neg: Option<usize> = None;
            for j in 0..d.n {
                if j == a {
                    continue;
                }
                if labels[j] == labels[a] {
                    if pos.is_none_or(|p| d.get(a, j) > d.get(a, p)) {
                        pos = Some(j);
                    }
                } else if neg.is_none_or(|q| d.get(a, j) < d.get(a, q)) {
                    neg = Some(j);
                }
            }
            match (pos, neg) {
                (Some(positive), Some(negative)) => Ok(HardPair { anchor: a, positive, negative }),
                _ => Err(Error::Contract(format!("anchor {a} lacks a positive or a negative in the batch"))),
            }
        })
        .collect()
}

/// Mean over anchors of `max(0, margin + d(a, p*) - d(a, n*))`.
pub fn batch_hard_triplet<T: Real>(d: &DistanceMatrix<T>, labels: &[usize], margin: T) -> Result<T> {
    let pairs = mine_batch_hard(d, labels)?;
    let total: T = pairs.iter().map(|hp| (margin + d.get(hp.anchor, hp.positive) - d.get(hp.anchor, hp.negative)).max(T::zero())).sum();
    Ok(total / T::of(pairs.len() as f64))
}

impl<T: Real> Graph<T> {
    /// `[N, D]` embeddings to an `[N, N]` distance matrix.
    pub fn pairwise_distances(&mut self, emb: Var) -> Result<Var> {
        let m = pairwise_euclidean(self.value(emb))?;
        let n = m.n;
        let out = Tensor::new([n, n], m.d)?;
        self.push("pairwise_distances", out, &[emb], move |i: &[&Tensor<T>], o: &Tensor<T>, g: &Tensor<T>, _: &[bool]| {
            let dim = i[0].dim(1);
            let e = i[0].data();
            let mut ge = vec![T::zero(); e.len()];
            for a in 0..n {
                for b in 0..n {
                    let gv = g.data()[a * n + b];
                    if a == b || gv == T::zero() {
                        continue;
                    }
                    let k = gv / o.data()[a * n + b];
                    for c in 0..dim {
                        let diff = e[a * dim + c] - e[b * dim + c];
                        ge[a * dim + c] += k * diff;
                        ge[b * dim + c] -= k * diff;
                    }
                }
            }
            Ok(vec![Some(Tensor::new(i[0].shape(), ge)?)])
        })
    }

    /// Batch-hard triplet loss over a recorded distance matrix.
    pub fn batch_hard_triplet(&mut self, dist: Var, labels: &[usize], margin: T) -> Result<Var> {
        let dv = self.value(dist);
        dv.expect_rank("batch_hard_triplet", 2)?;
        let n = dv.dim(0);
        let m = DistanceMatrix { n, d: dv.data().to_vec() };
        let pairs = mine_batch_hard(&m, labels)?;
        let loss = batch_hard_triplet(&m, labels, margin)?;
        let active: Vec<HardPair> = pairs.into_iter().filter(|hp| margin + m.get(hp.anchor, hp.positive) - m.get(hp.anchor, hp.negative) > T::zero()).collect();
        self.push("batch_hard_triplet", Tensor::scalar(loss), &[dist], move |i: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>, _: &[bool]| {
            let k = g.item() / T::of(n as f64);
            let mut gd = vec![T::zero(); n * n];
            for hp in &active {
                gd[hp.anchor * n + hp.positive] += k;
                gd[hp.anchor * n + hp.negative] -= k;
            }
            Ok(vec![Some(Tensor::new(i[0].shape(), gd)?)])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn pk_counts_and_determinism() {
        let ids = [0, 0, 0, 1, 1, 2, 2, 2, 3, 3];
        let a = pk_batch_sample(&ids, 2, 2, &mut Rng::seed_from_u64(1)).unwrap();
        let b = pk_batch_sample(&ids, 2, 2, &mut Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert_eq!(ids[a[0]], ids[a[1]]);
        assert_eq!(ids[a[2]], ids[a[3]]);
        assert_ne!(ids[a[0]], ids[a[2]]);
    }

    #[test]
    fn small_identity_is_sampled_with_replacement() {
        let ids = [7, 8, 8, 8, 8];
        let picked = pk_batch_sample(&ids, 2, 4, &mut Rng::seed_from_u64(5)).unwrap();
        let sevens: Vec<usize> = picked.iter().copied().filter(|&i| ids[i] == 7).collect();
        assert_eq!(sevens, vec![0; 4]);
    }

    #[test]
    fn too_few_identities_is_a_config_error() {
        let err = pk_batch_sample(&[0, 0, 1], 3, 2, &mut Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "p"));
    }

    #[test]
    fn distances() {
        let e = Tensor::<f64>::from_f64(&[3, 2], &[0.0, 0.0, 3.0, 4.0, 0.0, 0.0]).unwrap();
        let d = pairwise_euclidean(&e).unwrap();
        assert!((d.get(0, 1) - 5.0).abs() < 1e-12);
        assert!(d.get(0, 2) < 1e-5);
        assert_eq!(d.get(1, 1), 0.0);
        assert_eq!(d.get(1, 0), d.get(0, 1));
    }

    fn matrix(n: usize, f: impl Fn(usize, usize) -> f64) -> DistanceMatrix<f64> {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    d[i * n + j] = f(i, j);
                }
            }
        }
        DistanceMatrix { n, d }
    }

    #[test]
    fn satisfied_margin_gives_zero_loss() {
        let labels = [0, 0, 1, 1];
        let d = matrix(4, |i, j| if labels[i] == labels[j] { 0.0 } else { 0.7 });
        assert_eq!(batch_hard_triplet(&d, &labels, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn equal_distances_give_the_margin() {
        let labels = [0, 0, 1, 1];
        let d = matrix(4, |_, _| 1.0);
        assert!((batch_hard_triplet(&d, &labels, 0.5).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn anchor_without_positive_is_rejected() {
        let d = matrix(3, |_, _| 1.0);
        assert!(matches!(batch_hard_triplet(&d, &[0, 1, 1], 0.5), Err(Error::Contract(_))));
        assert!(matches!(batch_hard_triplet(&d, &[0, 0, 0], 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn ties_pick_the_lowest_index() {
        let labels = [0, 0, 0, 1, 1];
        let d = matrix(5, |_, _| 2.0);
        let pairs = mine_batch_hard(&d, &labels).unwrap();
        assert_eq!(pairs[0], HardPair { anchor: 0, positive: 1, negative: 3 });
        assert_eq!(pairs[4], HardPair { anchor: 4, positive: 3, negative: 0 });
    }
}
