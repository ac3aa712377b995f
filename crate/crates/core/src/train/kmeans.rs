use rand::Rng;

use crate::error::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// K-means++ seeding: the first centroid uniformly, each next one with
/// probability proportional to its squared distance from the nearest chosen.
fn seed<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = nearest.iter().rposition(|&d| d > 0.0).expect("enough distinct points");
        for (i, &d) in nearest.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        let c = points[pick].clone();
        for (n, p) in nearest.iter_mut().zip(points) {
            *n = n.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = (f64::INFINITY, 0);
            for (j, c) in centroids.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect()
}

/// Lloyd's algorithm from a K-means++ start, iterated until no assignment
/// changes. Returns `k` centroids.
pub fn kmeans<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(Error::Config("k-means needs k ≥ 1".into()));
    }
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("k-means points differ in dimension".into()));
    }
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.iter().any(|q| *q == p) {
            distinct.push(p);
            if distinct.len() >= k {
                break;
            }
        }
    }
    if distinct.len() < k {
        return Err(Error::Contract(format!(
            "k-means with k = {k} needs at least {k} distinct points, found {}",
            distinct.len()
        )));
    }
    let mut centroids = seed(points, k, rng);
    let mut labels = assign(points, &centroids);
    loop {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            // an emptied cluster keeps its previous centroid
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let next = assign(points, &centroids);
        if next == labels {
            return Ok(centroids);
        }
        labels = next;
    }
}
