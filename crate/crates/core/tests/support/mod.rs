//! Direct transcriptions of the loss formulas on plain slices. Nothing here
//! calls into the library, so agreement is an independent check.

#![allow(dead_code)]

pub mod agreement;
pub mod gradcheck;

pub mod oracle {
    fn softmax(z: &[f64], t: f64) -> Vec<f64> {
        let e: Vec<f64> = z.iter().map(|v| (v / t).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    fn mean_cols(rows: &[Vec<f64>]) -> Vec<f64> {
        let mut m = vec![0.0; rows[0].len()];
        for r in rows {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b / rows.len() as f64;
            }
        }
        m
    }

    pub fn l1_class(probs: &[Vec<f64>], label: usize) -> f64 {
        -probs.iter().map(|p| p[label].ln()).sum::<f64>() / probs.len() as f64
    }

    /// `pairs` are (mean, variance).
    pub fn l1_reg(pairs: &[(f64, f64)], y: f64) -> f64 {
        pairs
            .iter()
            .map(|&(m, v)| (m - y) * (m - y) / v + v.ln())
            .sum::<f64>()
            / (2.0 * pairs.len() as f64)
    }

    pub fn l2_class(teacher: &[Vec<f64>], student: &[Vec<f64>], t: f64) -> f64 {
        let pt = mean_cols(&teacher.iter().map(|z| softmax(z, t)).collect::<Vec<_>>());
        let ps = mean_cols(&student.iter().map(|z| softmax(z, t)).collect::<Vec<_>>());
        -pt.iter().zip(&ps).map(|(a, b)| a * b.ln()).sum::<f64>()
    }

    pub fn aggregate(pairs: &[(f64, f64)]) -> (f64, f64) {
        let n = pairs.len() as f64;
        let mu = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let ale = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let epi = pairs.iter().map(|p| (p.0 - mu) * (p.0 - mu)).sum::<f64>() / n;
        (mu, ale + epi)
    }

    fn kl_core(t: (f64, f64), s: (f64, f64)) -> f64 {
        0.5 * ((t.1 + (t.0 - s.0) * (t.0 - s.0)) / s.1 + s.1.ln())
    }

    pub fn l2_reg(teacher: &[(f64, f64)], student: &[(f64, f64)]) -> f64 {
        kl_core(aggregate(teacher), aggregate(student))
    }

    pub fn l3_class(teacher: &[Vec<f64>], student: &[Vec<f64>], t: f64) -> f64 {
        let m = student.len();
        let mut total = 0.0;
        for (n, zt) in teacher.iter().enumerate() {
            let pt = softmax(zt, t);
            let ps = softmax(&student[n % m], t);
            total -= pt.iter().zip(&ps).map(|(a, b)| a * b.ln()).sum::<f64>();
        }
        total / teacher.len() as f64
    }

    pub fn l3_reg(teacher: &[(f64, f64)], student: &[(f64, f64)]) -> f64 {
        let m = student.len();
        teacher
            .iter()
            .enumerate()
            .map(|(n, &t)| kl_core(t, student[n % m]))
            .sum::<f64>()
            / teacher.len() as f64
    }

    /// `heads[m][l]` is a list of node weight vectors.
    pub fn l4(heads: &[Vec<Vec<Vec<f64>>>]) -> f64 {
        let mh = heads.len();
        let mut total = 0.0;
        for l in 0..heads[0].len() {
            for head in heads {
                let nodes = head[l].len();
                let mut c = 0.0;
                for r in 0..nodes {
                    let cols = head[l][r].len();
                    let mean: Vec<f64> = (0..cols)
                        .map(|k| heads.iter().map(|h| h[l][r][k]).sum::<f64>() / mh as f64)
                        .collect();
                    let a = &head[l][r];
                    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let nb = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if na >= 1e-12 && nb >= 1e-12 {
                        c += a.iter().zip(&mean).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
                    }
                }
                total += (1.0 + c / nodes as f64) / 2.0;
            }
        }
        total
    }

    pub fn total(alpha: f64, beta: f64, t_ind: f64, t_mean: f64, lambda: f64, l: [f64; 4]) -> f64 {
        (1.0 - alpha) * l[0]
            + alpha * ((1.0 - beta) * t_mean * t_mean * l[1] + beta * t_ind * t_ind * l[2])
            + lambda * l[3]
    }
}
