//! Per-architecture triple scores and their parameter gradients.
//!
//! Complex-valued architectures store an embedding of width `d` as
//! `[re_0 .. re_{d/2-1}, im_0 .. im_{d/2-1}]`. RotatE relations are `d/2`
//! phases.

use super::Architecture;

#[inline]
fn f<T: Copy + Into<f64>>(x: T) -> f64 {
    x.into()
}

pub(crate) fn score<T: Copy + Into<f64>>(arch: Architecture, h: &[T], r: &[T], t: &[T]) -> f64 {
    let d = h.len();
    match arch {
        Architecture::TransE => -(0..d).map(|k| (f(h[k]) + f(r[k]) - f(t[k])).abs()).sum::<f64>(),
        Architecture::ComplEx => {
            let m = d / 2;
            (0..m)
                .map(|k| {
                    let (hr, hi) = (f(h[k]), f(h[m + k]));
                    let (rr, ri) = (f(r[k]), f(r[m + k]));
                    let (tr, ti) = (f(t[k]), f(t[m + k]));
                    hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr
                })
                .sum()
        }
        Architecture::Rescal => (0..d)
            .map(|i| {
                let row = &r[i * d..(i + 1) * d];
                let wt: f64 = row.iter().zip(t).map(|(&w, &x)| f(w) * f(x)).sum();
                f(h[i]) * wt
            })
            .sum(),
        Architecture::RotatE => {
            let m = d / 2;
            -(0..m)
                .map(|k| {
                    let (c, s) = (f(r[k]).cos(), f(r[k]).sin());
                    let (hr, hi) = (f(h[k]), f(h[m + k]));
                    let x = hr * c - hi * s - f(t[k]);
                    let y = hr * s + hi * c - f(t[m + k]);
                    x.hypot(y)
                })
                .sum::<f64>()
        }
    }
}

/// Accumulates `coeff * ∂score/∂θ` into the three gradient buffers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_grad(
    arch: Architecture,
    h: &[f64],
    r: &[f64],
    t: &[f64],
    coeff: f64,
    gh: &mut [f64],
    gr: &mut [f64],
    gt: &mut [f64],
) {
    let d = h.len();
    match arch {
        Architecture::TransE => {
            for k in 0..d {
                let diff = h[k] + r[k] - t[k];
                let sg = if diff > 0.0 {
                    1.0
                } else if diff < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                gh[k] -= coeff * sg;
                gr[k] -= coeff * sg;
                gt[k] += coeff * sg;
            }
        }
        Architecture::ComplEx => {
            let m = d / 2;
            for k in 0..m {
                let (hr, hi) = (h[k], h[m + k]);
                let (rr, ri) = (r[k], r[m + k]);
                let (tr, ti) = (t[k], t[m + k]);
                gh[k] += coeff * (rr * tr + ri * ti);
                gh[m + k] += coeff * (rr * ti - ri * tr);
                gr[k] += coeff * (hr * tr + hi * ti);
                gr[m + k] += coeff * (hr * ti - hi * tr);
                gt[k] += coeff * (hr * rr - hi * ri);
                gt[m + k] += coeff * (hi * rr + hr * ri);
            }
        }
        Architecture::Rescal => {
            for i in 0..d {
                let row = &r[i * d..(i + 1) * d];
                let wt: f64 = row.iter().zip(t).map(|(w, x)| w * x).sum();
                gh[i] += coeff * wt;
                for j in 0..d {
                    gr[i * d + j] += coeff * h[i] * t[j];
                    gt[j] += coeff * h[i] * row[j];
                }
            }
        }
        Architecture::RotatE => {
            let m = d / 2;
            for k in 0..m {
                let (c, s) = (r[k].cos(), r[k].sin());
                let (hr, hi) = (h[k], h[m + k]);
                let x = hr * c - hi * s - t[k];
                let y = hr * s + hi * c - t[m + k];
                let dist = x.hypot(y);
                if dist == 0.0 {
                    continue;
                }
                let (ux, uy) = (x / dist, y / dist);
                gh[k] -= coeff * (ux * c + uy * s);
                gh[m + k] -= coeff * (-ux * s + uy * c);
                gt[k] += coeff * ux;
                gt[m + k] += coeff * uy;
                gr[k] -= coeff * (ux * (-hr * s - hi * c) + uy * (hr * c - hi * s));
            }
        }
    }
}
