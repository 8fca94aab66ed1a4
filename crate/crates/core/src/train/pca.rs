use crate::error::{Error, Result};

/// Principal-component projection of a point cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit eigenvectors of the covariance, largest eigenvalue first.
    pub components: Vec<Vec<f64>>,
    /// Variance along each component.
    pub variances: Vec<f64>,
    /// Projected coordinates, one row per input vector.
    pub coords: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// Top eigenpair of a symmetric positive semi-definite matrix by power
/// iteration, started from its largest column.
fn power_iteration(m: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let d = m.len();
    let start = (0..d)
        .max_by(|&a, &b| dot(&m[a], &m[a]).total_cmp(&dot(&m[b], &m[b])))
        .unwrap_or(0);
    let mut v = m[start].clone();
    let norm = dot(&v, &v).sqrt();
    if norm == 0.0 {
        let mut e = vec![0.0; d];
        e[start] = 1.0;
        return (0.0, e);
    }
    v.iter_mut().for_each(|x| *x /= norm);
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let w = mat_vec(m, &v);
        let n = dot(&w, &w).sqrt();
        if n == 0.0 {
            return (0.0, v);
        }
        let next: Vec<f64> = w.iter().map(|x| x / n).collect();
        let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        v = next;
        lambda = n;
        if delta < 1e-13 {
            break;
        }
    }
    (lambda, v)
}

/// Mean-centres `vectors` and projects them on the top `k` eigenvectors of
/// their covariance, found by power iteration with deflation.
pub fn pca_project(vectors: &[Vec<f64>], k: usize) -> Result<Pca> {
    let n = vectors.len();
    let d = vectors.first().map_or(0, Vec::len);
    if k == 0 || k > d {
        return Err(Error::Contract(format!("cannot take {k} components of {d}-dim data")));
    }
    if n < k {
        return Err(Error::Contract(format!("need at least {k} vectors, got {n}")));
    }
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::Contract("vectors have different lengths".into()));
    }
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n as f64;
        }
    }
    let centred: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for v in &centred {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += v[i] * v[j] / n as f64;
            }
        }
    }
    let mut components = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for _ in 0..k {
        let (lambda, v) = power_iteration(&cov);
        for i in 0..d {
            for j in 0..d {
                cov[i][j] -= lambda * v[i] * v[j];
            }
        }
        variances.push(lambda);
        components.push(v);
    }
    let coords = centred
        .iter()
        .map(|v| components.iter().map(|c| dot(v, c)).collect())
        .collect();
    Ok(Pca {
        mean,
        components,
        variances,
        coords,
    })
}
