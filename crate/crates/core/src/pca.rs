//! Deterministic 2-D projection of embeddings onto the top two principal
//! components.

use crate::mat::Mat;
use crate::stats::StatsError;

/// Mean-center the rows of `data` and project them onto the two leading
/// eigenvectors of the sample covariance. Component variances come out in
/// non-increasing order; eigenvector signs are fixed so the output is
/// deterministic.
pub fn project_2d(data: &Mat) -> Result<Mat, StatsError> {
    let n = data.rows();
    let d = data.cols();
    if n < 3 {
        return Err(StatsError::TooFewSamples { need: 3, got: n });
    }
    if d < 2 {
        return Err(StatsError::DegenerateData);
    }

    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(data.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    // Sample covariance of the centered data.
    let mut cov = Mat::zeros(d, d);
    for r in 0..n {
        let row = data.row(r);
        for i in 0..d {
            let ci = row[i] - mean[i];
            for j in i..d {
                let v = cov.at(i, j) + ci * (row[j] - mean[j]);
                cov.set(i, j, v);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov.at(i, j) / (n as f64 - 1.0);
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }

    let (eigvals, eigvecs) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigvals[b].partial_cmp(&eigvals[a]).unwrap());
    if eigvals[order[0]] <= 0.0 {
        return Err(StatsError::DegenerateData);
    }

    // Deterministic sign: largest-magnitude coefficient is positive.
    let mut components = [vec![0.0; d], vec![0.0; d]];
    for (c, comp) in components.iter_mut().enumerate() {
        let col = order[c];
        for (i, v) in comp.iter_mut().enumerate() {
            *v = eigvecs.at(i, col);
        }
        let lead = comp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if comp[lead] < 0.0 {
            for v in comp.iter_mut() {
                *v = -*v;
            }
        }
    }

    let mut out = Mat::zeros(n, 2);
    for r in 0..n {
        let row = data.row(r);
        for (c, comp) in components.iter().enumerate() {
            let mut acc = 0.0;
            for i in 0..d {
                acc += (row[i] - mean[i]) * comp[i];
            }
            out.set(r, c, acc);
        }
    }
    Ok(out)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvector columns).
fn jacobi_eigen(m: &Mat) -> (Vec<f64>, Mat) {
    let d = m.rows();
    let mut a = m.clone();
    let mut v = Mat::zeros(d, d);
    for i in 0..d {
        v.set(i, i, 1.0);
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..d {
            for j in i + 1..d {
                off += a.at(i, j) * a.at(i, j);
            }
        }
        if off < 1e-22 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a.at(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a.at(p, p);
                let aqq = a.at(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..d {
                    let aip = a.at(i, p);
                    let aiq = a.at(i, q);
                    a.set(i, p, c * aip - s * aiq);
                    a.set(i, q, s * aip + c * aiq);
                }
                for i in 0..d {
                    let api = a.at(p, i);
                    let aqi = a.at(q, i);
                    a.set(p, i, c * api - s * aqi);
                    a.set(q, i, s * api + c * aqi);
                }
                for i in 0..d {
                    let vip = v.at(i, p);
                    let viq = v.at(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }
    let eig = (0..d).map(|i| a.at(i, i)).collect();
    (eig, v)
}
