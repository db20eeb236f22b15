//! Finite-difference verification of every registered operator.
//!
//! Each check builds a random instance of one operator in f64, reduces the
//! output to a scalar through a fixed random projection (a plain sum would
//! hide permutation bugs), and compares the autodiff gradient of every leaf
//! against central differences. Inputs that sit on a non-differentiable kink
//! (relu at 0, bilinear samples at integer coordinates) are sampled away from
//! it; the spots themselves are exercised by the exact-equivalence tests.

use crate::error::{invalid, Result};
use crate::graph::{finite_difference_gradient, Graph, TensorId};
use crate::inception::{self, InceptionTextConfig};
use crate::ops::{self, ConvSpec, PsMapSpec, PsRoi, UpsampleMode};
use crate::rng::DetRng;
use crate::tensor::{random_uniform, Tensor};

pub const TOLERANCE: f64 = 1e-3;
pub const FD_STEP: f64 = 1e-3;
/// Fixed seed set used by the acceptance suite and the CLI default.
pub const DEFAULT_SEEDS: [u64; 5] = [101, 202, 303, 404, 505];

type BuildFn = dyn Fn(&mut Graph<f64>, &[TensorId]) -> Result<TensorId> + Sync;

/// Max relative error between autodiff and central differences over all
/// elements of all leaves, for a scalar-rooted graph built by `build`.
pub fn compare_autodiff_fd(
    build: &BuildFn,
    leaves: &[Tensor<f64>],
    h: f64,
) -> Result<f64> {
    let mut g: Graph<f64> = Graph::new();
    let ids: Vec<TensorId> = leaves.iter().map(|t| g.input(t.clone(), true)).collect();
    let root = build(&mut g, &ids)?;
    if !g.value(root).is_scalar() {
        return Err(invalid!("gradient check root must be scalar"));
    }
    g.backward(root)?;

    let mut max_err = 0.0f64;
    for (li, leaf) in leaves.iter().enumerate() {
        let autodiff: Vec<f64> = match g.grad(ids[li]) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; leaf.numel()],
        };
        let fd = finite_difference_gradient(
            |x: &Tensor<f64>| -> Result<f64> {
                let mut g2: Graph<f64> = Graph::new();
                let ids2: Vec<TensorId> = leaves
                    .iter()
                    .enumerate()
                    .map(|(j, t)| g2.input(if j == li { x.clone() } else { t.clone() }, false))
                    .collect();
                let root2 = build(&mut g2, &ids2)?;
                Ok(g2.value(root2).first())
            },
            leaf,
            h,
        )?;
        for (&a, &f) in autodiff.iter().zip(fd.data()) {
            let denom = a.abs().max(f.abs()).max(1e-2);
            max_err = max_err.max((a - f).abs() / denom);
        }
    }
    Ok(max_err)
}

/// One named operator check; `run(seed)` returns the max relative error.
pub struct Check {
    pub name: &'static str,
    pub run: Box<dyn Fn(u64) -> Result<f64> + Sync + Send>,
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub failure: Option<String>,
}

/// Run checks over the seed set; an execution error counts as a failure.
pub fn run_checks(checks: &[Check], seeds: &[u64], tolerance: f64) -> Vec<CheckOutcome> {
    checks
        .iter()
        .map(|check| {
            let mut worst = 0.0f64;
            let mut failure = None;
            for &seed in seeds {
                match (check.run)(seed) {
                    Ok(err) => worst = worst.max(err),
                    Err(e) => {
                        failure = Some(format!("seed {seed}: {e}"));
                        break;
                    }
                }
            }
            CheckOutcome {
                name: check.name.to_string(),
                max_rel_err: worst,
                tolerance,
                passed: failure.is_none() && worst < tolerance,
                failure,
            }
        })
        .collect()
}

/// Uniform values bounded away from zero (for relu-style kinks).
fn away_from_zero(rng: &mut DetRng, shape: Vec<usize>, min_abs: f64, max_abs: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
        sign * rng.range_f64(min_abs, max_abs)
    })
}

/// Project a node to a scalar with fixed weights.
fn project(g: &mut Graph<f64>, y: TensorId, weights: &Tensor<f64>) -> Result<TensorId> {
    let flat_len = g.value(y).numel();
    let flat = ops::reshape(g, y, vec![flat_len])?;
    let w = g.constant(weights.clone());
    let p = ops::mul(g, flat, w)?;
    Ok(ops::sum_all(g, p))
}

/// Run `build`, learn the output shape, then return a projection tensor.
fn projection_for(
    build: &BuildFn,
    leaves: &[Tensor<f64>],
    rng: &mut DetRng,
) -> Result<Tensor<f64>> {
    let mut g: Graph<f64> = Graph::new();
    let ids: Vec<TensorId> = leaves.iter().map(|t| g.input(t.clone(), false)).collect();
    let out = build(&mut g, &ids)?;
    let n = g.value(out).numel();
    Ok(random_uniform(rng, vec![n], 0.25, 1.75))
}

fn check_projected(
    raw: impl Fn(&mut Graph<f64>, &[TensorId]) -> Result<TensorId> + Sync + 'static,
    leaves: Vec<Tensor<f64>>,
    rng: &mut DetRng,
) -> Result<f64> {
    let weights = projection_for(&raw, &leaves, rng)?;
    let build = move |g: &mut Graph<f64>, ids: &[TensorId]| -> Result<TensorId> {
        let y = raw(g, ids)?;
        project(g, y, &weights)
    };
    compare_autodiff_fd(&build, &leaves, FD_STEP)
}

/// The full operator registry checked by the CLI `gradcheck` command and the
/// acceptance suite.
pub fn builtin_checks() -> Vec<Check> {
    let mut checks: Vec<Check> = Vec::new();

    checks.push(Check {
        name: "add",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let a = random_uniform(&mut rng, vec![7], -1.0, 1.0);
            let b = random_uniform(&mut rng, vec![7], -1.0, 1.0);
            check_projected(|g, ids| ops::add(g, ids[0], ids[1]), vec![a, b], &mut rng)
        }),
    });

    checks.push(Check {
        name: "mul",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let a = random_uniform(&mut rng, vec![7], -1.0, 1.0);
            let b = random_uniform(&mut rng, vec![7], -1.0, 1.0);
            check_projected(|g, ids| ops::mul(g, ids[0], ids[1]), vec![a, b], &mut rng)
        }),
    });

    checks.push(Check {
        name: "relu",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let a = away_from_zero(&mut rng, vec![9], 0.05, 1.0);
            check_projected(|g, ids| Ok(ops::relu(g, ids[0])), vec![a], &mut rng)
        }),
    });

    checks.push(Check {
        name: "scale",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let a = random_uniform(&mut rng, vec![6], -1.0, 1.0);
            let k = rng.range_f64(-2.0, 2.0);
            check_projected(move |g, ids| Ok(ops::scale(g, ids[0], k)), vec![a], &mut rng)
        }),
    });

    checks.push(Check {
        name: "reductions",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let a = random_uniform(&mut rng, vec![3, 2, 2], -1.0, 1.0);
            check_projected(
                |g, ids| {
                    let per_channel = ops::sum_trailing(g, ids[0]);
                    let mean = ops::mean_all(g, ids[0]);
                    ops::concat_flat(g, &[per_channel, mean])
                },
                vec![a],
                &mut rng,
            )
        }),
    });

    checks.push(Check {
        name: "gather_concat_reshape",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let a = random_uniform(&mut rng, vec![4, 3], -1.0, 1.0);
            let b = random_uniform(&mut rng, vec![5], -1.0, 1.0);
            check_projected(
                |g, ids| {
                    let flat = ops::reshape(g, ids[0], vec![12])?;
                    let picked = ops::gather(g, flat, vec![0, 5, 5, 11, 3])?;
                    ops::concat_flat(g, &[picked, ids[1]])
                },
                vec![a, b],
                &mut rng,
            )
        }),
    });

    checks.push(Check {
        name: "concat_channels",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let a = random_uniform(&mut rng, vec![1, 2, 3, 3], -1.0, 1.0);
            let b = random_uniform(&mut rng, vec![1, 1, 3, 3], -1.0, 1.0);
            check_projected(
                |g, ids| ops::concat_channels(g, &[ids[0], ids[1], ids[0]]),
                vec![a, b],
                &mut rng,
            )
        }),
    });

    checks.push(Check {
        name: "linear",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let x = random_uniform(&mut rng, vec![5], -1.0, 1.0);
            let w = random_uniform(&mut rng, vec![4, 5], -1.0, 1.0);
            let b = random_uniform(&mut rng, vec![4], -1.0, 1.0);
            check_projected(
                |g, ids| ops::linear(g, ids[0], ids[1], Some(ids[2])),
                vec![x, w, b],
                &mut rng,
            )
        }),
    });

    checks.push(Check {
        name: "conv2d",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let stride = 1 + rng.below(2);
            let pad = rng.below(2);
            let spec = ConvSpec::square(3, stride, pad, 2, 3);
            let x = random_uniform(&mut rng, vec![1, 2, 6, 6], -1.0, 1.0);
            let w = random_uniform(&mut rng, vec![3, 2, 3, 3], -1.0, 1.0);
            let b = random_uniform(&mut rng, vec![3], -1.0, 1.0);
            check_projected(
                move |g, ids| ops::conv2d(g, ids[0], ids[1], Some(ids[2]), spec),
                vec![x, w, b],
                &mut rng,
            )
        }),
    });

    checks.push(Check {
        name: "conv2d_dilated",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let spec = ConvSpec::square(3, 1, 2, 2, 2).with_dilation(2);
            let x = random_uniform(&mut rng, vec![1, 2, 7, 7], -1.0, 1.0);
            let w = random_uniform(&mut rng, vec![2, 2, 3, 3], -1.0, 1.0);
            let b = random_uniform(&mut rng, vec![2], -1.0, 1.0);
            check_projected(
                move |g, ids| ops::conv2d(g, ids[0], ids[1], Some(ids[2]), spec),
                vec![x, w, b],
                &mut rng,
            )
        }),
    });

    checks.push(Check {
        name: "factorized_conv",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let n = if rng.below(2) == 0 { 3 } else { 5 };
            let x = random_uniform(&mut rng, vec![1, 2, 6, 6], -1.0, 1.0);
            let wr = random_uniform(&mut rng, vec![2, 2, 1, n], -1.0, 1.0);
            let wc = random_uniform(&mut rng, vec![2, 2, n, 1], -1.0, 1.0);
            let b = random_uniform(&mut rng, vec![2], -1.0, 1.0);
            check_projected(
                move |g, ids| ops::factorized_conv(g, ids[0], n, ids[1], ids[2], Some(ids[3])),
                vec![x, wr, wc, b],
                &mut rng,
            )
        }),
    });

    checks.push(Check {
        name: "bilinear_sample",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let map = random_uniform(&mut rng, vec![3, 5, 5], -1.0, 1.0);
            // interior point with fractional parts safely off the lattice
            let x = rng.below(3) as f64 + rng.range_f64(0.15, 0.85);
            let y = rng.below(3) as f64 + rng.range_f64(0.15, 0.85);
            let coords = Tensor::new(vec![2], vec![x, y]).expect("coord pair");
            check_projected(
                |g, ids| ops::bilinear_sample(g, ids[0], ids[1]),
                vec![map, coords],
                &mut rng,
            )
        }),
    });

    checks.push(Check {
        name: "deformable_conv2d",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let spec = ConvSpec::square(3, 1, 1, 2, 2);
            let x = random_uniform(&mut rng, vec![1, 2, 5, 5], -1.0, 1.0);
            let off = away_from_zero(&mut rng, vec![1, 18, 5, 5], 0.15, 0.85);
            let w = random_uniform(&mut rng, vec![2, 2, 3, 3], -1.0, 1.0);
            let b = random_uniform(&mut rng, vec![2], -1.0, 1.0);
            check_projected(
                move |g, ids| ops::deformable_conv2d(g, ids[0], ids[1], ids[2], Some(ids[3]), spec),
                vec![x, off, w, b],
                &mut rng,
            )
        }),
    });

    checks.push(Check {
        name: "psroi_pool",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let spec = PsMapSpec::new(3, 2);
            let maps = random_uniform(&mut rng, vec![spec.map_channels(), 9, 9], -1.0, 1.0);
            let x0 = rng.range_f64(0.2, 2.0);
            let y0 = rng.range_f64(0.2, 2.0);
            let roi = PsRoi::new(x0, y0, x0 + rng.range_f64(3.0, 6.0), y0 + rng.range_f64(3.0, 6.0));
            check_projected(
                move |g, ids| ops::psroi_pool(g, ids[0], roi, spec),
                vec![maps],
                &mut rng,
            )
        }),
    });

    checks.push(Check {
        name: "deformable_psroi_pool",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let spec = PsMapSpec::new(3, 2);
            let maps = random_uniform(&mut rng, vec![spec.map_channels(), 9, 9], -1.0, 1.0);
            let x0 = rng.range_f64(0.2, 2.0) + 0.31;
            let y0 = rng.range_f64(0.2, 2.0) + 0.43;
            let roi = PsRoi::new(x0, y0, x0 + rng.range_f64(3.0, 6.0), y0 + rng.range_f64(3.0, 6.0));
            let off = away_from_zero(&mut rng, vec![2, 3, 3], 0.15, 0.85);
            check_projected(
                move |g, ids| ops::deformable_psroi_pool(g, ids[0], roi, ids[1], spec, 0.1),
                vec![maps, off],
                &mut rng,
            )
        }),
    });

    checks.push(Check {
        name: "upsample2x_nearest",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let x = random_uniform(&mut rng, vec![1, 2, 3, 4], -1.0, 1.0);
            check_projected(
                |g, ids| ops::upsample2x(g, ids[0], UpsampleMode::Nearest),
                vec![x],
                &mut rng,
            )
        }),
    });

    checks.push(Check {
        name: "upsample2x_bilinear",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let x = random_uniform(&mut rng, vec![1, 2, 3, 4], -1.0, 1.0);
            check_projected(
                |g, ids| ops::upsample2x(g, ids[0], UpsampleMode::Bilinear),
                vec![x],
                &mut rng,
            )
        }),
    });

    checks.push(Check {
        name: "softmax_cross_entropy",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let logits = random_uniform(&mut rng, vec![4, 3], -1.5, 1.5);
            let targets: Vec<usize> = (0..4).map(|_| rng.below(3)).collect();
            check_projected(
                move |g, ids| ops::softmax_cross_entropy(g, ids[0], &targets),
                vec![logits],
                &mut rng,
            )
        }),
    });

    checks.push(Check {
        name: "smooth_l1",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            // half the residuals in the quadratic zone, half in the linear
            // zone, none near the |d| = 1 seam
            let target = random_uniform(&mut rng, vec![8], -0.2, 0.2);
            let pred = Tensor::from_fn(vec![8], |i| {
                let t = target.data()[i];
                if i % 2 == 0 {
                    t + rng.range_f64(-0.5, 0.5)
                } else {
                    let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                    t + sign * rng.range_f64(1.5, 2.5)
                }
            });
            check_projected(
                |g, ids| ops::smooth_l1(g, ids[0], ids[1]),
                vec![pred, target],
                &mut rng,
            )
        }),
    });

    checks.push(Check {
        name: "binary_cross_entropy",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let logits = random_uniform(&mut rng, vec![9], -2.0, 2.0);
            let targets = random_uniform(&mut rng, vec![9], 0.0, 1.0);
            check_projected(
                |g, ids| ops::binary_cross_entropy(g, ids[0], ids[1]),
                vec![logits, targets],
                &mut rng,
            )
        }),
    });

    checks.push(Check {
        name: "inception_text_block",
        run: Box::new(|seed| {
            let mut rng = DetRng::new(seed);
            let config = InceptionTextConfig {
                in_channels: 8,
                reduce_channels: 2,
                deform_kernel: 3,
                out_channels: 8,
                deformable: true,
            };
            inception::gradcheck_block(&config, &mut rng)
        }),
    });

    checks
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::sum_all;

    #[test]
    fn correct_backward_passes() {
        let checks = builtin_checks();
        let add = checks.iter().find(|c| c.name == "add").unwrap();
        let err = (add.run)(7).unwrap();
        assert!(err < TOLERANCE, "err {err}");
    }

    #[test]
    fn corrupted_backward_is_reported_as_failure() {
        // custom op with a deliberately wrong gradient (negative control)
        let bad = Check {
            name: "corrupted_square",
            run: Box::new(|seed| {
                let mut rng = DetRng::new(seed);
                let x = random_uniform(&mut rng, vec![4], 0.5, 1.5);
                let build = |g: &mut Graph<f64>, ids: &[TensorId]| -> Result<TensorId> {
                    let x = ids[0];
                    let sq = {
                        let v = g.value(x).clone();
                        let out = Tensor::new(
                            v.shape().to_vec(),
                            v.data().iter().map(|&a| a * a).collect(),
                        )
                        .expect("same shape");
                        g.push_op(
                            out,
                            &[x],
                            Box::new(move |ctx| {
                                // wrong: claims d(x^2)/dx = 3
                                let delta: Vec<f64> =
                                    ctx.out_grad().iter().map(|&g| g * 3.0).collect();
                                ctx.accumulate(x, &delta);
                            }),
                        )
                    };
                    Ok(sum_all(g, sq))
                };
                compare_autodiff_fd(&build, &[x], FD_STEP)
            }),
        };
        let outcomes = run_checks(&[bad], &[1, 2], TOLERANCE);
        assert_eq!(outcomes.len(), 1);
        assert!(!outcomes[0].passed);
        assert!(outcomes[0].max_rel_err > 0.1);
    }
}
