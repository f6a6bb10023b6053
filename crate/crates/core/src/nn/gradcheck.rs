//! Central finite-difference checks of the reverse pass.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor, Var};

/// Default central-difference step for 64-bit checks.
pub const FD_STEP: f64 = 1e-5;

/// Max over all parameter entries of `|g_ad − g_fd| / max(1, |g_fd|)`.
///
/// `f` builds a scalar on a fresh graph from one var per entry of `params`.
pub fn grad_check<F>(f: F, params: &[Tensor], fd_step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.leaf(p.clone())).collect();
    let root = f(&mut g, &vars)?;
    if g.value(root).len() != 1 {
        return Err(Error::shape("grad_check root", g.value(root).shape(), &[1]));
    }
    let grads = g.backward(root)?;

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let root = f(&mut g, &vars)?;
        Ok(g.scalar(root))
    };

    let mut worst: f64 = 0.0;
    let mut work = params.to_vec();
    for (k, p) in params.iter().enumerate() {
        let analytic = grads
            .wrt(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(p.shape()));
        for j in 0..p.len() {
            let orig = p.data()[j];
            work[k].data_mut()[j] = orig + fd_step;
            let up = eval(&work)?;
            work[k].data_mut()[j] = orig - fd_step;
            let down = eval(&work)?;
            work[k].data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * fd_step);
            let err = (analytic.data()[j] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("sized")
}

/// Random values bounded away from zero, so kinks (ReLU, pooling ties,
/// distances) stay outside the finite-difference stencil.
fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).expect("sized")
}

/// Reduce a tensor to a scalar through a fixed random weighting so every
/// output entry has a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, y: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let shape = g.shape(y).to_vec();
    let r = g.constant(rand_tensor(&mut rng, &shape, -1.0, 1.0));
    let p = g.mul(y, r)?;
    Ok(g.sum(p))
}

type Case = (&'static str, Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64>>);

fn check<F>(params: Vec<Tensor>, seed: u64, f: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    grad_check(
        |g, v| {
            let y = f(g, v)?;
            weighted_sum(g, y, seed)
        },
        &params,
        FD_STEP,
    )
}

fn primitive_cases() -> Vec<Case> {
    vec![
        (
            "linear",
            Box::new(|r| {
                let ps = vec![
                    rand_tensor(r, &[3, 4], -1., 1.),
                    rand_tensor(r, &[4, 5], -1., 1.),
                    rand_tensor(r, &[5], -1., 1.),
                ];
                check(ps, r.random(), |g, v| g.linear(v[0], v[1], Some(v[2])))
            }),
        ),
        (
            "add_sub_mul_affine",
            Box::new(|r| {
                let ps = vec![
                    rand_tensor(r, &[2, 3], -1., 1.),
                    rand_tensor(r, &[2, 3], -1., 1.),
                ];
                check(ps, r.random(), |g, v| {
                    let a = g.add(v[0], v[1])?;
                    let s = g.sub(a, v[1])?;
                    let m = g.mul(s, v[1])?;
                    Ok(g.affine(m, -1.7, 0.3))
                })
            }),
        ),
        (
            "relu",
            Box::new(|r| {
                check(vec![rand_away_from_zero(r, &[3, 4])], r.random(), |g, v| {
                    Ok(g.relu(v[0]))
                })
            }),
        ),
        (
            "leaky_relu",
            Box::new(|r| {
                check(vec![rand_away_from_zero(r, &[3, 4])], r.random(), |g, v| {
                    Ok(g.leaky_relu(v[0], 0.2))
                })
            }),
        ),
        (
            "tanh",
            Box::new(|r| {
                check(
                    vec![rand_tensor(r, &[3, 4], -2., 2.)],
                    r.random(),
                    |g, v| Ok(g.tanh(v[0])),
                )
            }),
        ),
        (
            "sigmoid",
            Box::new(|r| {
                check(
                    vec![rand_tensor(r, &[3, 4], -3., 3.)],
                    r.random(),
                    |g, v| Ok(g.sigmoid(v[0])),
                )
            }),
        ),
        (
            "log_prob",
            Box::new(|r| {
                check(
                    vec![rand_tensor(r, &[3, 4], 0.05, 0.95)],
                    r.random(),
                    |g, v| Ok(g.log_prob(v[0])),
                )
            }),
        ),
        (
            "concat_slice_gather_rows",
            Box::new(|r| {
                let ps = vec![
                    rand_tensor(r, &[3, 2], -1., 1.),
                    rand_tensor(r, &[3, 3], -1., 1.),
                ];
                check(ps, r.random(), |g, v| {
                    let c = g.concat_cols(&[v[0], v[1]])?;
                    let s = g.slice_cols(c, 1, 3)?;
                    let gr = g.gather_rows(s, &[2, 0, 2, 1])?;
                    let cr = g.concat_rows(&[gr, s])?;
                    g.reshape(cr, &[7, 3])
                })
            }),
        ),
        (
            "softmax_rows",
            Box::new(|r| {
                check(
                    vec![rand_tensor(r, &[3, 5], -2., 2.)],
                    r.random(),
                    |g, v| g.softmax_rows(v[0]),
                )
            }),
        ),
        (
            "segment_softmax_weighted_sum",
            Box::new(|r| {
                let ps = vec![
                    rand_tensor(r, &[6, 1], -2., 2.),
                    rand_tensor(r, &[6, 3], -1., 1.),
                ];
                check(ps, r.random(), |g, v| {
                    let w = g.segment_softmax(v[0], &[2, 0, 3, 1])?;
                    g.segment_weighted_sum(w, v[1], &[2, 0, 3, 1])
                })
            }),
        ),
        (
            "row_dot_pick_cols",
            Box::new(|r| {
                let ps = vec![
                    rand_tensor(r, &[4, 3], -1., 1.),
                    rand_tensor(r, &[4, 3], -1., 1.),
                ];
                check(ps, r.random(), |g, v| {
                    let d = g.row_dot(v[0], v[1])?;
                    let p = g.pick_cols(v[1], &[2, 0, 1, 1])?;
                    g.mul(d, p)
                })
            }),
        ),
        (
            "sum_mean",
            Box::new(|r| {
                check(
                    vec![rand_tensor(r, &[3, 3], -1., 1.)],
                    r.random(),
                    |g, v| {
                        let s = g.sum(v[0]);
                        let m = g.mean(v[0]);
                        g.mul(s, m)
                    },
                )
            }),
        ),
        (
            "lstm_cell",
            Box::new(|r| {
                let (i, h, n) = (3, 4, 2);
                let ps = vec![
                    rand_tensor(r, &[n, i], -1., 1.),
                    rand_tensor(r, &[n, h], -1., 1.),
                    rand_tensor(r, &[n, h], -1., 1.),
                    rand_tensor(r, &[i, 4 * h], -0.5, 0.5),
                    rand_tensor(r, &[h, 4 * h], -0.5, 0.5),
                    rand_tensor(r, &[4 * h], -0.5, 0.5),
                ];
                check(ps, r.random(), |g, v| {
                    g.lstm_cell(v[0], v[1], v[2], v[3], v[4], v[5])
                })
            }),
        ),
        (
            "conv3x3",
            Box::new(|r| {
                let ps = vec![
                    rand_tensor(r, &[2, 4, 4, 2], -1., 1.),
                    rand_tensor(r, &[18, 3], -0.5, 0.5),
                    rand_tensor(r, &[3], -0.5, 0.5),
                ];
                check(ps, r.random(), |g, v| g.conv3x3(v[0], v[1], v[2]))
            }),
        ),
        (
            "max_pool2",
            Box::new(|r| {
                // Distinct values on a coarse lattice keep pool windows tie-free.
                let mut vals: Vec<f64> = (0..32).map(|k| k as f64 * 0.1).collect();
                for k in (1..vals.len()).rev() {
                    vals.swap(k, r.random_range(0..=k));
                }
                let ps = vec![Tensor::new(&[2, 4, 2, 2], vals).expect("sized")];
                check(ps, r.random(), |g, v| g.max_pool2(v[0]))
            }),
        ),
        (
            "stepwise_l2",
            Box::new(|r| {
                let ps = vec![
                    rand_tensor(r, &[3, 8], -1., 1.),
                    rand_tensor(r, &[3, 8], 2., 3.),
                ];
                check(ps, r.random(), |g, v| g.stepwise_l2(v[0], v[1]))
            }),
        ),
    ]
}

/// Runs every primitive's reverse pass against finite differences for
/// `cases` random parameterisations; returns the worst error per primitive.
pub fn primitive_suite(cases: usize, seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, case) in primitive_cases() {
        let mut worst: f64 = 0.0;
        for _ in 0..cases {
            worst = worst.max(case(&mut rng)?);
        }
        out.push((name, worst));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares() {
        let err = grad_check(
            |g, v| {
                let sq = g.mul(v[0], v[0])?;
                Ok(g.sum(sq))
            },
            &[Tensor::scalar(3.0)],
            FD_STEP,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // detach() cuts the gradient path, so analytic (0) disagrees with fd (1).
        let err = grad_check(
            |g, v| {
                let d = g.detach(v[0]);
                Ok(g.sum(d))
            },
            &[Tensor::scalar(2.0)],
            FD_STEP,
        )
        .unwrap();
        assert!(err > 0.5);
    }

    #[test]
    fn primitives_pass() {
        for (name, err) in primitive_suite(10, 11).unwrap() {
            assert!(err < 1e-6, "{name}: {err}");
        }
    }
}
