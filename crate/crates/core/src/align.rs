// SPDX-License-Identifier: MIT OR Apache-2.0

//! Monotonic alignment search, frame aggregation and k-means tokenization.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{arg, Error, Result};
use crate::matrix::{sq_dist, Matrix};
use crate::rng::Rng;

/// Per-frame token index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath {
    pub tokens: usize,
    pub frames: Vec<usize>,
}

impl AlignmentPath {
    /// Starts at token 0, ends at `tokens - 1`, advances by 0 or 1 per frame.
    pub fn is_valid(&self) -> bool {
        let f = &self.frames;
        !f.is_empty()
            && self.tokens >= 1
            && f[0] == 0
            && f[f.len() - 1] == self.tokens - 1
            && f.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1)
    }

    /// Frames per token.
    pub fn durations(&self) -> Vec<usize> {
        let mut d = vec![0; self.tokens];
        for &a in &self.frames {
            d[a] += 1;
        }
        d
    }

    pub fn score(&self, post: &Matrix) -> f64 {
        self.frames
            .iter()
            .enumerate()
            .map(|(t, &a)| post.get(t, a))
            .sum()
    }
}

/// Highest-scoring monotonic path through a `T x N` log-posterior matrix.
/// On ties the traceback stays on the current token, so equal-score
/// paths advance as early as possible.
pub fn mas(post: &Matrix) -> Result<AlignmentPath> {
    let (t_len, n) = post.shape();
    if n == 0 {
        return arg("posterior matrix has no tokens");
    }
    if t_len < n {
        return Err(Error::Infeasible(format!(
            "{t_len} frames cannot cover {n} tokens"
        )));
    }
    if !post.is_finite() {
        return arg("posterior matrix has non-finite entries");
    }
    // acc[t][j]: best score of frames 0..=t ending on token j
    let mut acc = Matrix::filled(t_len, n, f64::NEG_INFINITY);
    // came_from_prev[t][j]: token j at frame t entered from j - 1
    let mut advanced = vec![false; t_len * n];
    acc.set(0, 0, post.get(0, 0));
    for t in 1..t_len {
        // token j needs j frames before it and n-1-j after it
        let lo = (n - 1).saturating_sub(t_len - 1 - t);
        let hi = t.min(n - 1);
        for j in lo..=hi {
            let stay = acc.get(t - 1, j);
            let step = if j > 0 {
                acc.get(t - 1, j - 1)
            } else {
                f64::NEG_INFINITY
            };
            let (best, adv) = if step > stay {
                (step, true)
            } else {
                (stay, false)
            };
            acc.set(t, j, best + post.get(t, j));
            advanced[t * n + j] = adv;
        }
    }
    let mut frames = vec![0; t_len];
    let mut j = n - 1;
    for t in (0..t_len).rev() {
        frames[t] = j;
        if t > 0 && advanced[t * n + j] {
            j -= 1;
        }
    }
    Ok(AlignmentPath { tokens: n, frames })
}

/// Per-token frame means and durations.
pub fn aggregate(path: &AlignmentPath, frames: &Matrix) -> Result<(Matrix, Vec<usize>)> {
    if frames.rows() != path.frames.len() {
        return Err(Error::Dimension {
            op: "aggregate",
            left: (path.frames.len(), path.tokens),
            right: frames.shape(),
        });
    }
    if !path.is_valid() {
        return arg("alignment path violates monotonicity");
    }
    let durations = path.durations();
    let mut out = Matrix::zeros(path.tokens, frames.cols());
    for (t, &a) in path.frames.iter().enumerate() {
        for (o, v) in out.row_mut(a).iter_mut().zip(frames.row(t)) {
            *o += v;
        }
    }
    for (j, &d) in durations.iter().enumerate() {
        let inv = 1.0 / d as f64;
        out.row_mut(j).iter_mut().for_each(|v| *v *= inv);
    }
    Ok((out, durations))
}

/// k-means centroids used to discretize frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTokenizer {
    pub centroids: Matrix,
    pub iterations: usize,
    /// Sum of squared distances after seeding and after each Lloyd step.
    pub objective: Vec<f64>,
}

impl SemanticTokenizer {
    pub fn classes(&self) -> usize {
        self.centroids.rows()
    }

    pub fn assign_all(&self, x: &Matrix) -> Result<Vec<usize>> {
        (0..x.rows())
            .map(|r| kmeans_assign(self, x.row(r)))
            .collect()
    }
}

fn nearest(c: &Matrix, q: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for r in 0..c.rows() {
        let d = sq_dist(c.row(r), q);
        if d < best.1 {
            best = (r, d);
        }
    }
    best
}

/// Nearest centroid; ties go to the lower index.
pub fn kmeans_assign(tok: &SemanticTokenizer, v: &[f64]) -> Result<usize> {
    if v.len() != tok.centroids.cols() {
        return Err(Error::Dimension {
            op: "kmeans_assign",
            left: (1, v.len()),
            right: tok.centroids.shape(),
        });
    }
    Ok(nearest(&tok.centroids, v).0)
}

pub const KMEANS_MAX_ITERS: usize = 200;

/// k-means++ seeding followed by Lloyd iterations until the assignment stops changing.
pub fn kmeans_fit(x: &Matrix, classes: usize, seed: u64) -> Result<SemanticTokenizer> {
    let n = x.rows();
    if classes == 0 {
        return arg("k-means needs at least one class");
    }
    if n < classes {
        return arg(format!("{n} samples for {classes} classes"));
    }
    if !x.is_finite() {
        return arg("k-means input has non-finite entries");
    }
    let mut rng = Rng::new(seed);
    let mut chosen = vec![rng.below(n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|r| sq_dist(x.row(r), x.row(chosen[0])))
        .collect();
    while chosen.len() < classes {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.uniform() * total;
            let mut pick = n - 1;
            for (r, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = r;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            // all remaining points coincide with a centroid
            (0..n).find(|r| !chosen.contains(r)).expect("n >= classes")
        };
        chosen.push(pick);
        for (r, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(r), x.row(pick)));
        }
    }
    let mut centroids = x.select_rows(&chosen);
    let mut labels: Vec<usize> = (0..n).map(|r| nearest(&centroids, x.row(r)).0).collect();
    let cost = |c: &Matrix, l: &[usize]| -> f64 {
        l.iter()
            .enumerate()
            .map(|(r, &k)| sq_dist(x.row(r), c.row(k)))
            .sum()
    };
    let mut objective = vec![cost(&centroids, &labels)];
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        iterations += 1;
        let mut sums = Matrix::zeros(classes, x.cols());
        let mut counts = vec![0usize; classes];
        for (r, &k) in labels.iter().enumerate() {
            counts[k] += 1;
            for (s, v) in sums.row_mut(k).iter_mut().zip(x.row(r)) {
                *s += v;
            }
        }
        for k in 0..classes {
            // empty clusters keep their centroid
            if counts[k] > 0 {
                let inv = 1.0 / counts[k] as f64;
                for (c, s) in centroids.row_mut(k).iter_mut().zip(sums.row(k)) {
                    *c = s * inv;
                }
            }
        }
        let next: Vec<usize> = (0..n).map(|r| nearest(&centroids, x.row(r)).0).collect();
        objective.push(cost(&centroids, &next));
        if next == labels {
            break;
        }
        labels = next;
    }
    Ok(SemanticTokenizer {
        centroids,
        iterations,
        objective,
    })
}

/// Synthetic frame features and log-posteriors for a token sequence.
///
/// Each token `j` spans `durations[j]` frames whose features are
/// `means[j] + noise`; the posterior of frame `t` favours its own token with
/// log-odds `sharpness`.
pub fn synthetic_frames(
    means: &Matrix,
    durations: &[usize],
    noise: f64,
    sharpness: f64,
    rng: &mut Rng,
) -> Result<(Matrix, Matrix)> {
    let n = means.rows();
    if durations.len() != n || durations.contains(&0) {
        return arg("every token needs a positive duration");
    }
    let t_len: usize = durations.iter().sum();
    let mut frames = Matrix::zeros(t_len, means.cols());
    let mut post = Matrix::zeros(t_len, n);
    let mut t = 0;
    for (j, &d) in durations.iter().enumerate() {
        for _ in 0..d {
            for (f, m) in frames.row_mut(t).iter_mut().zip(means.row(j)) {
                *f = m + noise * rng.normal();
            }
            let row = post.row_mut(t);
            for (k, p) in row.iter_mut().enumerate() {
                *p = if k == j { sharpness } else { 0.0 } + 0.5 * rng.normal();
            }
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + libm::log(row.iter().map(|v| libm::exp(v - mx)).sum());
            row.iter_mut().for_each(|v| *v -= lse);
            t += 1;
        }
    }
    Ok((post, frames))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_token_takes_every_frame() {
        let post = Matrix::new(4, 1, vec![-1.0, -2.0, -0.5, -3.0]).unwrap();
        let p = mas(&post).unwrap();
        assert_eq!(p.frames, vec![0; 4]);
        assert_eq!(p.score(&post), -6.5);
    }

    #[test]
    fn diagonal_dominant() {
        let post = Matrix::from_rows(&[&[-0.1, -3.0], &[-0.2, -2.0], &[-2.5, -0.3], &[-4.0, -0.1]])
            .unwrap();
        assert_eq!(mas(&post).unwrap().frames, vec![0, 0, 1, 1]);
    }

    #[test]
    fn ties_stay_on_current_token() {
        let post = Matrix::zeros(4, 2);
        assert_eq!(mas(&post).unwrap().frames, vec![0, 1, 1, 1]);
    }

    #[test]
    fn too_few_frames() {
        assert!(matches!(
            mas(&Matrix::zeros(2, 3)),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn aggregate_identity_and_constant() {
        let x = Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64);
        let diag = AlignmentPath {
            tokens: 3,
            frames: vec![0, 1, 2],
        };
        let (m, d) = aggregate(&diag, &x).unwrap();
        assert_eq!(m, x);
        assert_eq!(d, vec![1, 1, 1]);
        let same = Matrix::filled(5, 2, 0.25);
        let p = AlignmentPath {
            tokens: 2,
            frames: vec![0, 0, 1, 1, 1],
        };
        let (m, d) = aggregate(&p, &same).unwrap();
        assert_eq!(m, Matrix::filled(2, 2, 0.25));
        assert_eq!(d, vec![2, 3]);
        assert!(aggregate(&p, &Matrix::zeros(4, 2)).is_err());
    }

    #[test]
    fn kmeans_each_point_its_own_centroid() {
        let x = Matrix::from_fn(5, 2, |r, c| (r * r) as f64 + c as f64);
        let tok = kmeans_fit(&x, 5, 3).unwrap();
        assert_eq!(*tok.objective.last().unwrap(), 0.0);
        assert!(kmeans_fit(&x, 6, 3).is_err());
    }
}
