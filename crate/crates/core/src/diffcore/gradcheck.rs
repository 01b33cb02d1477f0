//! Central finite-difference verification of tape gradients (64-bit only).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, LstmParams, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Worst relative error found for one input tensor.
#[derive(Debug, Clone)]
pub struct ParamError {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences with step `1e-6 * max(1, |x|)`, for every scalar in `inputs`.
pub fn grad_check<F>(f: F, inputs: &[(String, Tensor<f64>)], rel_tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let analytic = tape_gradients(&f, inputs)?;
    compare_differences(inputs, &analytic, rel_tolerance, |values| {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_of(&g, out)
    })
}

/// Gradients of the scalar built by `f` with respect to every input.
pub fn tape_gradients<F>(f: &F, inputs: &[(String, Tensor<f64>)]) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|(_, t)| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    scalar_of(&g, out)?;
    g.backward(out)?;
    inputs
        .iter()
        .zip(&vars)
        .map(|((name, original), &v)| {
            let grad = g.grad(v).unwrap_or_else(|| Tensor::zeros(original.shape()));
            match grad.first_non_finite() {
                Some(index) => Err(Error::NonFinite {
                    what: format!("analytic gradient of `{name}`"),
                    index,
                }),
                None => Ok(grad),
            }
        })
        .collect()
}

/// Central differences of `eval` against `analytic`. The objective may be
/// evaluated in any scalar type; the difference quotient is formed in that
/// type before rounding to `f64`.
pub fn compare_differences<E, F>(
    inputs: &[(String, Tensor<f64>)],
    analytic: &[Tensor<f64>],
    rel_tolerance: f64,
    eval: F,
) -> Result<GradCheckReport>
where
    E: Real,
    F: Fn(&[Tensor<f64>]) -> Result<E>,
{
    let mut values: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let mut params = Vec::with_capacity(inputs.len());
    for (which, (name, original)) in inputs.iter().enumerate() {
        let mut worst = ParamError {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
        };
        for j in 0..original.numel() {
            let x = original.data()[j];
            let h = 1e-6 * x.abs().max(1.0);
            values[which].data_mut()[j] = x + h;
            let plus = eval(&values)?;
            values[which].data_mut()[j] = x - h;
            let minus = eval(&values)?;
            values[which].data_mut()[j] = x;
            let numeric = ((plus - minus) / E::of(2.0 * h)).as_f64();
            if !numeric.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("numeric gradient of `{name}`"),
                    index: j,
                });
            }
            let err = relative_error(analytic[which].data()[j], numeric);
            if err > worst.max_rel_error {
                worst.max_rel_error = err;
                worst.worst_index = j;
            }
        }
        params.push(worst);
    }
    Ok(GradCheckReport {
        params,
        tolerance: rel_tolerance,
    })
}

pub(crate) fn scalar_of<R: Real>(g: &Graph<R>, v: Var) -> Result<R> {
    let t = g.value(v);
    if t.numel() != 1 {
        return Err(Error::shape(format!(
            "grad_check: objective must be scalar, got {:?}",
            t.shape()
        )));
    }
    Ok(t.data()[0])
}

/// Reduces an arbitrary output to a scalar through fixed random weights so
/// every output element contributes a distinct gradient.
pub fn random_projection(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(out).to_vec();
    let w = random_tensor(&shape, seed ^ 0x9e37_79b9_7f4a_7c15);
    let w = g.constant(w);
    let prod = g.mul(out, w)?;
    Ok(g.sum(prod))
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

fn named(name: &str, t: Tensor<f64>) -> (String, Tensor<f64>) {
    (name.to_string(), t)
}

/// Gradient checks of every differentiable primitive on seeded random
/// instances. Returns `(op name, report)` pairs.
pub fn op_suite(seed: u64, rel_tolerance: f64) -> Result<Vec<(String, GradCheckReport)>> {
    let s = |k: u64| seed.wrapping_mul(1000).wrapping_add(k);
    let mut out = Vec::new();

    let inputs = vec![
        named("input", random_tensor(&[2, 5, 5], s(1))),
        named("kernel", random_tensor(&[3, 2, 3, 3], s(2))),
        named("bias", random_tensor(&[3], s(3))),
    ];
    out.push((
        "conv2d".to_string(),
        grad_check(
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], 1)?;
                random_projection(g, y, s(4))
            },
            &inputs,
            rel_tolerance,
        )?,
    ));

    let inputs = vec![
        named("input", random_tensor(&[1, 6, 6], s(5))),
        named("kernel", random_tensor(&[2, 1, 2, 2], s(6))),
        named("bias", random_tensor(&[2], s(7))),
    ];
    out.push((
        "conv2d_stride2".to_string(),
        grad_check(
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], 2)?;
                random_projection(g, y, s(8))
            },
            &inputs,
            rel_tolerance,
        )?,
    ));

    let inputs = vec![
        named("input", random_tensor(&[3], s(9))),
        named("weight", random_tensor(&[4, 3], s(10))),
        named("bias", random_tensor(&[4], s(11))),
    ];
    out.push((
        "linear".to_string(),
        grad_check(
            |g, v| {
                let y = g.linear(v[0], v[1], v[2])?;
                random_projection(g, y, s(12))
            },
            &inputs,
            rel_tolerance,
        )?,
    ));

    let (n, d) = (4, 3);
    let inputs = vec![
        named("x", random_tensor(&[n], s(13))),
        named("h_prev", random_tensor(&[d], s(14))),
        named("c_prev", random_tensor(&[d], s(15))),
        named("w_input", random_tensor(&[4 * d, n], s(16))),
        named("w_hidden", random_tensor(&[4 * d, d], s(17))),
        named("bias", random_tensor(&[4 * d], s(18))),
    ];
    out.push((
        "lstm_step".to_string(),
        grad_check(
            |g, v| {
                let p = LstmParams {
                    w_input: v[3],
                    w_hidden: v[4],
                    bias: v[5],
                };
                let (h, c) = g.lstm_step(v[0], v[1], v[2], &p)?;
                let ph = random_projection(g, h, s(19))?;
                let pc = random_projection(g, c, s(20))?;
                g.add(ph, pc)
            },
            &inputs,
            rel_tolerance,
        )?,
    ));

    let inputs = vec![named("logits", random_tensor(&[5], s(21)))];
    out.push((
        "softmax".to_string(),
        grad_check(
            |g, v| {
                let y = g.softmax(v[0])?;
                random_projection(g, y, s(22))
            },
            &inputs,
            rel_tolerance,
        )?,
    ));
    out.push((
        "cross_entropy".to_string(),
        grad_check(|g, v| g.cross_entropy(v[0], 2), &inputs, rel_tolerance)?,
    ));

    let inputs = vec![named("input", random_tensor(&[2, 4, 4], s(23)))];
    out.push((
        "max_pool2d".to_string(),
        grad_check(
            |g, v| {
                let y = g.max_pool2d(v[0], 2)?;
                random_projection(g, y, s(24))
            },
            &inputs,
            rel_tolerance,
        )?,
    ));

    let inputs = vec![
        named("a", random_tensor(&[6], s(25))),
        named("b", random_tensor(&[6], s(26))),
    ];
    out.push((
        "elementwise".to_string(),
        grad_check(
            |g, v| {
                let r = g.relu(v[0]);
                let sg = g.sigmoid(v[1]);
                let th = g.tanh(v[0]);
                let diff = g.sub(r, sg)?;
                let sq = g.square(diff);
                let m = g.mul(sq, th)?;
                let sc = g.scale(m, 1.5);
                let mean = g.mean(&[sc, v[1]])?;
                let sl = g.slice(mean, 1, 4)?;
                random_projection(g, sl, s(27))
            },
            &inputs,
            rel_tolerance,
        )?,
    ));

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_linear_is_exact() {
        let inputs = vec![
            named("input", random_tensor(&[3], 1)),
            named("weight", Tensor::from_f64(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap()),
            named("bias", Tensor::zeros(&[3])),
        ];
        let report = grad_check(
            |g, v| {
                let y = g.linear(v[0], v[1], v[2])?;
                random_projection(g, y, 3)
            },
            &inputs,
            1e-9,
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-9, "{report:?}");
    }

    #[test]
    fn op_suite_passes() {
        for (name, report) in op_suite(7, 1e-5).unwrap() {
            assert!(report.passed(), "{name}: {report:?}");
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        // A deliberately broken objective: forward uses x^2 but the graph
        // only records the linear part, so the analytic gradient misses 2x.
        let inputs = vec![named("x", Tensor::from_f64(&[1], &[1.5]).unwrap())];
        let report = grad_check(
            |g, v| {
                let x2 = g.value(v[0]).data()[0].powi(2);
                let c = g.constant(Tensor::scalar(x2));
                g.add(v[0], c)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(!report.passed());
    }

    #[test]
    fn non_finite_gradient_is_reported() {
        let inputs = vec![named("x", Tensor::from_f64(&[1], &[1.0]).unwrap())];
        let err = grad_check(
            |g, v| {
                let inf = g.constant(Tensor::scalar(f64::INFINITY));
                let y = g.mul(v[0], inf)?;
                Ok(g.sum(y))
            },
            &inputs,
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 0, .. }), "{err}");
    }
}
