//! Central finite-difference gradient checks.
//!
//! The numerical side only ever runs forward passes, so it is independent of
//! [`Graph::backward`].

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Outcome of comparing analytic and numerical gradients for every input.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Worst per-input relative error `‖a − n‖ / max(‖a‖, ‖n‖)`.
    pub max_relative_error: f64,
    pub scalars_checked: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Checks `d f / d inputs` where `f` builds a scalar from the input leaves.
pub fn check<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.insert(format!("input{i}"), t.clone()))
        .collect::<Result<Vec<_>>>()?;

    let eval = |store: &ParamStore| -> Result<(Graph, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(store, id)).collect();
        let out = f(&mut g, &vars)?;
        Ok((g, out))
    };

    let (g, out) = eval(&store)?;
    let grads = g.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for &id in &ids {
        let base = store.get(id).clone();
        let analytic = grads
            .get(id)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; base.numel()]);
        let mut numeric = vec![0.0; base.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = base.clone().into_data();
            plus[j] += eps;
            store.set(id, Tensor::new(base.shape().to_vec(), plus)?)?;
            let (gp, op) = eval(&store)?;
            let fp = gp.value(op).item()?;

            let mut minus = base.clone().into_data();
            minus[j] -= eps;
            store.set(id, Tensor::new(base.shape().to_vec(), minus)?)?;
            let (gm, om) = eval(&store)?;
            let fm = gm.value(om).item()?;

            *slot = (fp - fm) / (2.0 * eps);
        }
        store.set(id, base)?;
        worst = worst.max(relative_error(&analytic, &numeric));
        checked += numeric.len();
    }
    Ok(GradCheck {
        max_relative_error: worst,
        scalars_checked: checked,
    })
}

/// Reduces any tensor node to a scalar via a fixed weighting, so the check
/// exercises a non-trivial upstream gradient.
pub fn weighted_sum(g: &mut Graph, v: Var, weights: &Tensor) -> Result<Var> {
    let w = g.constant(weights.reshape(g.shape(v).to_vec())?);
    let prod = g.mul(v, w)?;
    g.sum(prod)
}

/// Result of checking one op over many random instances.
#[derive(Clone, Debug)]
pub struct OpReport {
    pub op: &'static str,
    pub instances: usize,
    pub max_relative_error: f64,
}

fn random_tensor<R: rand::Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).expect("finite")
}

/// Randomized finite-difference checks of every differentiable graph op,
/// `instances` random draws each, central differences with step `eps`.
pub fn run_op_suite(instances: usize, eps: f64, seed: u64) -> Result<Vec<OpReport>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    let mut reports = Vec::new();

    macro_rules! suite {
        ($name:expr, |$r:ident| $body:expr) => {{
            let mut worst: f64 = 0.0;
            for _ in 0..instances {
                let $r = &mut rng;
                let err: GradCheck = $body?;
                worst = worst.max(err.max_relative_error);
            }
            reports.push(OpReport {
                op: $name,
                instances,
                max_relative_error: worst,
            });
        }};
    }

    suite!("matmul", |r| {
        let (m, k, n) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
        let w = random_tensor(r, &[m, n], 1.0);
        check(&[random_tensor(r, &[m, k], 1.0), random_tensor(r, &[k, n], 1.0)], eps, |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weighted_sum(g, y, &w)
        })
    });
    for (name, which) in [("add", 0), ("sub", 1), ("mul", 2)] {
        suite!(name, |r| {
            let shape = [r.gen_range(1..4), r.gen_range(1..5)];
            let w = random_tensor(r, &shape, 1.0);
            check(&[random_tensor(r, &shape, 1.0), random_tensor(r, &shape, 1.0)], eps, |g, v| {
                let y = match which {
                    0 => g.add(v[0], v[1])?,
                    1 => g.sub(v[0], v[1])?,
                    _ => g.mul(v[0], v[1])?,
                };
                weighted_sum(g, y, &w)
            })
        });
    }
    suite!("add_bias", |r| {
        let (m, n) = (r.gen_range(1..4), r.gen_range(1..5));
        let w = random_tensor(r, &[m, n], 1.0);
        check(&[random_tensor(r, &[m, n], 1.0), random_tensor(r, &[1, n], 1.0)], eps, |g, v| {
            let y = g.add_bias(v[0], v[1])?;
            weighted_sum(g, y, &w)
        })
    });
    suite!("scale", |r| {
        let s: f64 = r.gen_range(-3.0..3.0);
        let w = random_tensor(r, &[2, 3], 1.0);
        check(&[random_tensor(r, &[2, 3], 1.0)], eps, |g, v| {
            let y = g.scale(v[0], s)?;
            weighted_sum(g, y, &w)
        })
    });
    for (name, which) in [("sigmoid", 0), ("tanh", 1)] {
        suite!(name, |r| {
            let w = random_tensor(r, &[3, 4], 1.0);
            check(&[random_tensor(r, &[3, 4], 3.0)], eps, |g, v| {
                let y = if which == 0 { g.sigmoid(v[0])? } else { g.tanh(v[0])? };
                weighted_sum(g, y, &w)
            })
        });
    }
    suite!("softmax_tau", |r| {
        let tau: f64 = r.gen_range(0.5..2.0);
        let (m, n) = (r.gen_range(1..4), r.gen_range(2..6));
        let w = random_tensor(r, &[m, n], 1.0);
        check(&[random_tensor(r, &[m, n], 2.0)], eps, |g, v| {
            let y = g.softmax_tau(v[0], tau)?;
            weighted_sum(g, y, &w)
        })
    });
    suite!("cross_entropy", |r| {
        let (m, n) = (r.gen_range(1..5), r.gen_range(2..7));
        let targets: Vec<usize> = (0..m).map(|_| r.gen_range(0..n)).collect();
        let weights: Vec<f64> = (0..m).map(|_| r.gen_range(0.0..1.0)).collect();
        check(&[random_tensor(r, &[m, n], 2.0)], eps, |g, v| g.cross_entropy(v[0], &targets, &weights))
    });
    suite!("sum", |r| {
        check(&[random_tensor(r, &[3, 2], 1.0)], eps, |g, v| {
            let s = g.sum(v[0])?;
            g.mul(s, s)
        })
    });
    suite!("concat_cols", |r| {
        let m = r.gen_range(1..4);
        let (a, b) = (r.gen_range(1..4), r.gen_range(1..4));
        let w = random_tensor(r, &[m, a + b], 1.0);
        check(&[random_tensor(r, &[m, a], 1.0), random_tensor(r, &[m, b], 1.0)], eps, |g, v| {
            let y = g.concat_cols(&[v[0], v[1]])?;
            weighted_sum(g, y, &w)
        })
    });
    suite!("slice_cols", |r| {
        let (m, n) = (r.gen_range(1..4), r.gen_range(2..6));
        let start = r.gen_range(0..n - 1);
        let len = r.gen_range(1..=n - start);
        let w = random_tensor(r, &[m, len], 1.0);
        check(&[random_tensor(r, &[m, n], 1.0)], eps, |g, v| {
            let y = g.slice_cols(v[0], start, len)?;
            weighted_sum(g, y, &w)
        })
    });
    suite!("gather_rows", |r| {
        let (rows, d) = (r.gen_range(2..6), r.gen_range(1..4));
        let ids: Vec<usize> = (0..r.gen_range(1..6)).map(|_| r.gen_range(0..rows)).collect();
        let w = random_tensor(r, &[ids.len(), d], 1.0);
        check(&[random_tensor(r, &[rows, d], 1.0)], eps, |g, v| {
            let y = g.gather_rows(v[0], &ids)?;
            weighted_sum(g, y, &w)
        })
    });
    suite!("stack_steps", |r| {
        let (b, d) = (r.gen_range(1..3), r.gen_range(1..4));
        let w = random_tensor(r, &[b, 3, d], 1.0);
        let inputs: Vec<Tensor> = (0..3).map(|_| random_tensor(r, &[b, d], 1.0)).collect();
        check(&inputs, eps, |g, v| {
            let y = g.stack_steps(v)?;
            weighted_sum(g, y, &w)
        })
    });
    suite!("attn_scores", |r| {
        let (b, t, d) = (r.gen_range(1..3), r.gen_range(1..5), r.gen_range(1..4));
        let lengths: Vec<usize> = (0..b).map(|_| r.gen_range(1..=t)).collect();
        let w = random_tensor(r, &[b, t], 1.0);
        check(&[random_tensor(r, &[b, t, d], 1.0), random_tensor(r, &[b, d], 1.0)], eps, |g, v| {
            let s = g.attn_scores(v[0], v[1], &lengths)?;
            let a = g.softmax_tau(s, 1.0)?;
            weighted_sum(g, a, &w)
        })
    });
    suite!("attn_context", |r| {
        let (b, t, d) = (r.gen_range(1..3), r.gen_range(1..5), r.gen_range(1..4));
        let w = random_tensor(r, &[b, d], 1.0);
        check(&[random_tensor(r, &[b, t], 1.0), random_tensor(r, &[b, t, d], 1.0)], eps, |g, v| {
            let c = g.attn_context(v[0], v[1])?;
            weighted_sum(g, c, &w)
        })
    });
    suite!("conv1d_maxpool", |r| {
        let (b, t, d, k, width) = (r.gen_range(1..3), r.gen_range(1..8), r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..4));
        let lengths: Vec<usize> = (0..b).map(|_| r.gen_range(1..=t)).collect();
        let w = random_tensor(r, &[b, k], 1.0);
        let inputs = [
            random_tensor(r, &[b, t, d], 1.0),
            random_tensor(r, &[k, width * d], 1.0),
            random_tensor(r, &[1, k], 1.0),
        ];
        check(&inputs, eps, |g, v| {
            let y = g.conv1d_maxpool(v[0], v[1], v[2], width, &lengths)?;
            weighted_sum(g, y, &w)
        })
    });
    suite!("blend_rows", |r| {
        let (m, n) = (r.gen_range(1..5), r.gen_range(1..4));
        let mask: Vec<bool> = (0..m).map(|_| r.gen_bool(0.5)).collect();
        let w = random_tensor(r, &[m, n], 1.0);
        check(&[random_tensor(r, &[m, n], 1.0), random_tensor(r, &[m, n], 1.0)], eps, |g, v| {
            let y = g.blend_rows(v[0], v[1], &mask)?;
            weighted_sum(g, y, &w)
        })
    });
    suite!("lstm_cell", |r| {
        let (b, input, hidden) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4));
        let wh = random_tensor(r, &[b, hidden], 1.0);
        let wc = random_tensor(r, &[b, hidden], 1.0);
        let inputs = [
            random_tensor(r, &[b, input], 1.0),
            random_tensor(r, &[b, hidden], 1.0),
            random_tensor(r, &[b, hidden], 1.0),
            random_tensor(r, &[input, 4 * hidden], 0.8),
            random_tensor(r, &[hidden, 4 * hidden], 0.8),
            random_tensor(r, &[1, 4 * hidden], 0.8),
        ];
        check(&inputs, eps, |g, v| {
            let w = crate::LstmWeights {
                w_ih: v[3],
                w_hh: v[4],
                bias: v[5],
            };
            let (h, c) = crate::lstm_cell(g, v[0], v[1], v[2], &w)?;
            let lh = weighted_sum(g, h, &wh)?;
            let lc = weighted_sum(g, c, &wc)?;
            g.add(lh, lc)
        })
    });
    Ok(reports)
}
