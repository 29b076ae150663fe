#![allow(dead_code)]

//! Independent oracles shared by the integration tests. Nothing here calls
//! into the solver or the catalog builder.

use nalgebra::DMatrix;

/// Feature table transcription: (canonical name, level, first FV index
/// (1-based, 0 if FVS-only), in FV, in FVS).
pub const FEATURE_TABLE: &[(&str, &str, usize, bool, bool)] = &[
    ("eo", "scalar", 1, true, true),
    ("i_slice", "slice", 2, true, true),
    ("p_slice", "slice", 3, true, false),
    ("b_slice", "slice", 4, true, false),
    ("pb_slice", "slice", 0, false, true),
    ("intra_blocks", "blockpel", 5, true, true),
    ("isp", "blockpel", 18, true, false),
    ("intra_pdpc", "blockpel", 31, true, false),
    ("mip", "blockpel", 44, true, false),
    ("ibc", "blockpel", 57, true, false),
    ("inter_inter", "blockpel", 70, true, false),
    ("inter_merge", "blockpel", 83, true, false),
    ("inter_cu", "blockpel", 0, false, true),
    ("inter_skip", "blockpel", 96, true, true),
    ("affine", "blockpel", 109, true, false),
    ("triangle_split", "blockpel", 122, true, false),
    ("dmvr", "blockpel", 135, true, false),
    ("bdof", "blockpel", 148, true, false),
    ("uni", "pel", 161, true, true),
    ("bi", "pel", 162, true, true),
    ("frac_pel_hor", "pel", 163, true, true),
    ("frac_pel_ver", "pel", 164, true, true),
    ("frac_pel_both", "pel", 165, true, true),
    ("copy_pel", "pel", 166, true, true),
    ("transform", "blockpel", 167, true, true),
    ("transform_skip", "blockpel", 180, true, false),
    ("transform_no_cbf", "blockpel", 193, true, false),
    ("lfnst", "blockpel", 206, true, false),
    ("coeff", "pel", 219, true, true),
    ("coeff_g1", "pel", 220, true, false),
    ("val", "pel_log", 221, true, true),
    ("bs0", "boundary", 222, true, false),
    ("bs1", "boundary", 223, true, false),
    ("bs2", "boundary", 224, true, false),
    ("bs", "boundary", 0, false, true),
    ("sao_luma_bo", "ctb", 225, true, false),
    ("sao_luma_eo", "ctb", 226, true, false),
    ("sao_chroma_bo", "ctb", 227, true, false),
    ("sao_chroma_eo", "ctb", 228, true, false),
    ("sao", "ctb", 0, false, true),
    ("alf_luma", "ctb", 229, true, false),
    ("alf_chroma", "ctb", 230, true, false),
    ("alf", "ctb", 0, false, true),
];

pub fn width(level: &str) -> usize {
    if level == "blockpel" {
        13
    } else {
        1
    }
}

/// Pel counts of the blockpel vector, built by doubling from 4.
pub fn bin_vector() -> Vec<u32> {
    let mut v = vec![4u32];
    while v.len() < 13 {
        v.push(v[v.len() - 1] * 2);
    }
    v
}

pub fn objective(a: &[Vec<f64>], b: &[f64], x: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(row, bi)| {
            let r: f64 = row.iter().zip(x).map(|(aij, xj)| aij * xj).sum::<f64>() - bi;
            r * r
        })
        .sum()
}

/// Exhaustive grid minimization over the box `[lo, hi]` (J <= 3), refined
/// around the incumbent until the step is below `final_step`.
pub fn grid_minimize(
    a: &[Vec<f64>],
    b: &[f64],
    lo: &[f64],
    hi: &[f64],
    final_step: f64,
) -> Vec<f64> {
    let j = lo.len();
    assert!((1..=3).contains(&j));
    // ||A x - b||^2 = x'Gx - 2c'x + b'b, padded to three variables
    let mut g = [[0.0; 3]; 3];
    let mut c = [0.0; 3];
    for (row, bi) in a.iter().zip(b) {
        for p in 0..j {
            c[p] += row[p] * bi;
            for q in 0..j {
                g[p][q] += row[p] * row[q];
            }
        }
    }
    let f = |x: &[f64; 3]| -> f64 {
        let mut v = 0.0;
        for p in 0..3 {
            v += x[p] * (g[p][0] * x[0] + g[p][1] * x[1] + g[p][2] * x[2] - 2.0 * c[p]);
        }
        v
    };
    let mut win_lo = [0.0; 3];
    let mut win_hi = [0.0; 3];
    win_lo[..j].copy_from_slice(lo);
    win_hi[..j].copy_from_slice(hi);
    let mut points = [60usize, 60, 60];
    for p in points.iter_mut().skip(j) {
        *p = 0;
    }
    let mut best = [0.0; 3];
    loop {
        let mut steps = [0.0; 3];
        for d in 0..j {
            steps[d] = (win_hi[d] - win_lo[d]) / points[d] as f64;
        }
        let mut best_f = f64::INFINITY;
        for i0 in 0..=points[0] {
            for i1 in 0..=points[1] {
                for i2 in 0..=points[2] {
                    let x = [
                        win_lo[0] + i0 as f64 * steps[0],
                        win_lo[1] + i1 as f64 * steps[1],
                        win_lo[2] + i2 as f64 * steps[2],
                    ];
                    let v = f(&x);
                    if v < best_f {
                        best_f = v;
                        best = x;
                    }
                }
            }
        }
        if steps.iter().cloned().fold(0.0, f64::max) <= final_step {
            return best[..j].to_vec();
        }
        // zoom: a window of +-12 steps, sampled 5x finer
        for d in 0..j {
            win_lo[d] = (best[d] - 12.0 * steps[d]).max(lo[d]);
            win_hi[d] = (best[d] + 12.0 * steps[d]).min(hi[d]);
            points[d] = 120;
        }
    }
}

/// Checks the first-order conditions with tolerance `kappa * ||A^T b||_inf`:
/// free coefficients have a vanishing gradient, coefficients on a bound
/// have a gradient pointing out of the box.
pub fn check_kkt(
    a: &[Vec<f64>],
    b: &[f64],
    e: &[f64],
    lo: &[f64],
    hi: &[f64],
    kappa: f64,
) -> Result<(), String> {
    let n = a.len();
    let j = e.len();
    let resid: Vec<f64> = (0..n)
        .map(|i| (0..j).map(|c| a[i][c] * e[c]).sum::<f64>() - b[i])
        .collect();
    let grad: Vec<f64> = (0..j)
        .map(|c| (0..n).map(|i| a[i][c] * resid[i]).sum())
        .collect();
    let scale = (0..j)
        .map(|c| (0..n).map(|i| a[i][c] * b[i]).sum::<f64>().abs())
        .fold(0.0, f64::max);
    let tol = kappa * scale;
    for c in 0..j {
        if e[c] < lo[c] || e[c] > hi[c] {
            return Err(format!("e[{c}] = {} outside [{}, {}]", e[c], lo[c], hi[c]));
        }
        let ok = if e[c] == lo[c] && e[c] == hi[c] {
            true
        } else if e[c] == lo[c] {
            grad[c] >= -tol
        } else if e[c] == hi[c] {
            grad[c] <= tol
        } else {
            grad[c].abs() <= tol
        };
        if !ok {
            return Err(format!(
                "KKT violated at {c}: e = {}, g = {}, tol = {tol}",
                e[c], grad[c]
            ));
        }
    }
    Ok(())
}

pub fn to_dmatrix(a: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), a[0].len(), |i, j| a[i][j])
}

/// Solves the normal equations by Gaussian elimination with partial pivoting.
pub fn normal_equations(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let j = a[0].len();
    let mut m: Vec<Vec<f64>> = (0..j)
        .map(|r| {
            let mut row: Vec<f64> = (0..j)
                .map(|c| a.iter().map(|x| x[r] * x[c]).sum())
                .collect();
            row.push(a.iter().zip(b).map(|(x, bi)| x[r] * bi).sum());
            row
        })
        .collect();
    for col in 0..j {
        let p = (col..j)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, p);
        let pivot = m[col].clone();
        for (r, row) in m.iter_mut().enumerate().take(j) {
            if r != col {
                let f = row[col] / pivot[col];
                for (x, p) in row[col..=j].iter_mut().zip(&pivot[col..=j]) {
                    *x -= f * p;
                }
            }
        }
    }
    (0..j).map(|r| m[r][j] / m[r][r]).collect()
}

/// Sample mean and standard deviation (n - 1 denominator).
pub fn sample_stats(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, var.sqrt())
}
