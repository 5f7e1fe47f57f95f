//! Central finite-difference verification of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, NodeId, Scalar, Tensor, TensorError};

/// One scalar inside one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamElement {
    pub slot: usize,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest error over the compared elements.
    pub max_rel_error: f64,
    pub worst: Option<ParamElement>,
    /// Elements compared.
    pub checked: usize,
    /// Elements left out because every tried step crossed a leaky-ReLU kink,
    /// where the loss has no derivative to compare against.
    pub kinked: usize,
}

impl GradCheckReport {
    pub(crate) fn new() -> Self {
        Self {
            max_rel_error: 0.0,
            worst: None,
            checked: 0,
            kinked: 0,
        }
    }

    /// Folds one comparison into the report; `None` marks a kinked element.
    pub fn record(&mut self, element: ParamElement, err: Option<f64>) {
        let Some(err) = err else {
            self.kinked += 1;
            return;
        };
        if err > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = Some(element);
        }
        self.checked += 1;
    }
}

/// Default denominator floor of [`relative_error`].
pub const DEFAULT_FLOOR: f64 = 1e-8;

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_with_floor(analytic, numeric, DEFAULT_FLOOR)
}

/// `|a - n| / max(|a|, |n|, floor)`. The floor turns the check into an
/// absolute one for gradients too small for finite differences to resolve.
pub fn relative_error_with_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest [`relative_error`] over paired gradient values.
pub fn compare_gradients(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

fn eval_root<F, E, B>(params: &[Tensor<F>], build: &mut B) -> Result<(F, Vec<bool>), E>
where
    F: Scalar,
    E: From<TensorError>,
    B: FnMut(&mut Graph<F>, &[Tensor<F>]) -> Result<NodeId, E>,
{
    let mut g = Graph::new();
    let root = build(&mut g, params)?;
    let v = g.value(root);
    if v.len() != 1 {
        return Err(TensorError::NonScalarRoot(v.shape().to_vec()).into());
    }
    Ok((v.data()[0], g.kink_pattern()))
}

/// Each parameter element independently with probability `fraction`, plus
/// one random element of any tensor that would otherwise go unchecked.
pub fn sample_elements<F: Scalar>(params: &[Tensor<F>], fraction: f64, seed: u64) -> Vec<ParamElement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (slot, t) in params.iter().enumerate() {
        let before = out.len();
        for index in 0..t.len() {
            if rng.random::<f64>() < fraction {
                out.push(ParamElement { slot, index });
            }
        }
        if out.len() == before {
            out.push(ParamElement {
                slot,
                index: rng.random_range(0..t.len()),
            });
        }
    }
    out
}

/// Steps tried by [`smooth_numeric_gradient`], as divisors of `eps`.
const STEP_DIVISORS: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];

/// `(f(theta + eps) - f(theta - eps)) / (2 eps)` for one parameter element.
pub fn numeric_gradient<F, E, B>(params: &[Tensor<F>], element: ParamElement, eps: F, build: &mut B) -> Result<F, E>
where
    F: Scalar,
    E: From<TensorError>,
    B: FnMut(&mut Graph<F>, &[Tensor<F>]) -> Result<NodeId, E>,
{
    let mut work = params.to_vec();
    Ok(central_difference(&mut work, element, eps, build)?.0)
}

fn central_difference<F, E, B>(work: &mut [Tensor<F>], element: ParamElement, eps: F, build: &mut B) -> Result<(F, bool), E>
where
    F: Scalar,
    E: From<TensorError>,
    B: FnMut(&mut Graph<F>, &[Tensor<F>]) -> Result<NodeId, E>,
{
    let original = work[element.slot].data()[element.index];
    work[element.slot].data_mut()[element.index] = original + eps;
    let (plus, plus_kinks) = eval_root(work, build)?;
    work[element.slot].data_mut()[element.index] = original - eps;
    let (minus, minus_kinks) = eval_root(work, build)?;
    work[element.slot].data_mut()[element.index] = original;
    Ok(((plus - minus) / (eps + eps), plus_kinks == minus_kinks))
}

/// Central difference over a step that stays on one linear piece of every
/// leaky ReLU. Tries `eps`, then steps ten, a hundred and a thousand times
/// smaller; `None` when all of them cross a kink.
pub fn smooth_numeric_gradient<F, E, B>(
    params: &[Tensor<F>],
    element: ParamElement,
    eps: F,
    build: &mut B,
) -> Result<Option<F>, E>
where
    F: Scalar,
    E: From<TensorError>,
    B: FnMut(&mut Graph<F>, &[Tensor<F>]) -> Result<NodeId, E>,
{
    let mut work = params.to_vec();
    for d in STEP_DIVISORS {
        let (n, smooth) = central_difference(&mut work, element, eps / F::from_f64(d), build)?;
        if smooth {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

/// Compares the tape gradient of the scalar built by `build` against central
/// finite differences.
///
/// `build` must register `params[i]` with `Graph::param(i, ..)`. When
/// `elements` is `None` every parameter element is checked.
pub fn grad_check<F, E, B>(
    params: &[Tensor<F>],
    elements: Option<&[ParamElement]>,
    eps: F,
    build: B,
) -> Result<GradCheckReport, E>
where
    F: Scalar,
    E: From<TensorError>,
    B: FnMut(&mut Graph<F>, &[Tensor<F>]) -> Result<NodeId, E>,
{
    grad_check_with_floor(params, elements, eps, DEFAULT_FLOOR, build)
}

/// [`grad_check`] with an explicit denominator floor, see
/// [`relative_error_with_floor`].
pub fn grad_check_with_floor<F, E, B>(
    params: &[Tensor<F>],
    elements: Option<&[ParamElement]>,
    eps: F,
    floor: f64,
    mut build: B,
) -> Result<GradCheckReport, E>
where
    F: Scalar,
    E: From<TensorError>,
    B: FnMut(&mut Graph<F>, &[Tensor<F>]) -> Result<NodeId, E>,
{
    let all: Vec<ParamElement>;
    let elements = match elements {
        Some(e) => e,
        None => {
            all = params
                .iter()
                .enumerate()
                .flat_map(|(slot, t)| (0..t.len()).map(move |index| ParamElement { slot, index }))
                .collect();
            &all
        }
    };
    if elements.is_empty() {
        return Err(TensorError::NoParameters.into());
    }

    let mut g = Graph::new();
    let root = build(&mut g, params)?;
    let grads = g.backward(root)?;

    let mut report = GradCheckReport::new();
    for &el in elements {
        let analytic = grads.get(el.slot).map_or(0.0, |t| t.data()[el.index].as_f64());
        let numeric = smooth_numeric_gradient(params, el, eps, &mut build)?;
        report.record(el, numeric.map(|n| relative_error_with_floor(analytic, n.as_f64(), floor)));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::kernels::PoolMode;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    type Build = fn(&mut Graph<f64>, &[Tensor<f64>]) -> Result<NodeId, TensorError>;

    fn check(params: Vec<Tensor<f64>>, build: Build) -> f64 {
        grad_check(&params, None, 1e-4, build).unwrap().max_rel_error
    }

    #[test]
    fn affine_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = vec![random(&[8, 8], &mut rng), random(&[8], &mut rng)];
        let err = check(params, |g, p| {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let x = g.constant(random(&[8], &mut rng));
            let t = g.constant(random(&[8], &mut rng));
            let w = g.param(0, p[0].clone());
            let b = g.param(1, p[1].clone());
            let y = g.affine(x, w, b)?;
            g.mse(y, t)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn conv_and_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // input is a parameter here so dx is exercised as well
        let params = vec![
            random(&[2, 7, 6], &mut rng),
            random(&[3, 2, 3, 2], &mut rng),
            random(&[3], &mut rng),
        ];
        let err = check(params, |g, p| {
            let x = g.param(0, p[0].clone());
            let k = g.param(1, p[1].clone());
            let b = g.param(2, p[2].clone());
            let y = g.conv2d(x, k, b, 2)?;
            let t = g.constant(Tensor::full(g.value(y).shape(), 0.3));
            g.mse(y, t)
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn transposed_conv_leaky_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = vec![random(&[3, 2, 2], &mut rng), random(&[3, 2, 4, 4], &mut rng)];
        let err = check(params, |g, p| {
            let x = g.param(0, p[0].clone());
            let k = g.param(1, p[1].clone());
            let y = g.transposed_conv2d(x, k, 4)?;
            let y = g.leaky_relu(y, 0.01);
            let pooled = g.pool2d(y, 2, PoolMode::Mean)?;
            let summed = g.pool2d(y, 4, PoolMode::Sum)?;
            let t = g.constant(Tensor::full(g.value(pooled).shape(), 0.1));
            let t2 = g.constant(Tensor::full(g.value(summed).shape(), -0.2));
            let a = g.mse(pooled, t)?;
            let b = g.mse(summed, t2)?;
            let b = g.scale(b, 0.5);
            g.add(a, b)
        });
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn gap_concat_reshape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = vec![
            random(&[2, 3, 3], &mut rng),
            random(&[1, 3, 3], &mut rng),
            random(&[1, 3], &mut rng),
            random(&[1], &mut rng),
        ];
        let err = check(params, |g, p| {
            let a = g.param(0, p[0].clone());
            let b = g.param(1, p[1].clone());
            let w = g.param(2, p[2].clone());
            let bias = g.param(3, p[3].clone());
            let c = g.concat_channels(a, b)?;
            let pooled = g.global_avg_pool(c)?;
            let y = g.affine(pooled, w, bias)?;
            let flat = g.reshape(c, &[27])?;
            let t = g.constant(Tensor::zeros(&[27]));
            let m = g.mse(flat, t)?;
            let one = g.constant(Tensor::scalar(1.5));
            let e = g.mse(y, one)?;
            g.sum_all(&[m, e])
        });
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn no_parameters_is_an_error() {
        let err = grad_check::<f64, TensorError, _>(&[], None, 1e-4, |g, _| Ok(g.constant(Tensor::scalar(1.0))))
            .unwrap_err();
        assert_eq!(err.to_string(), "no parameters");
    }

    #[test]
    fn non_scalar_root_is_an_error() {
        let params = vec![Tensor::<f64>::zeros(&[3])];
        let err = grad_check::<f64, TensorError, _>(&params, None, 1e-4, |g, p| Ok(g.param(0, p[0].clone())))
            .unwrap_err();
        assert!(matches!(err, TensorError::NonScalarRoot(_)));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 0.5), 0.5);
        assert!((relative_error(1e-12, 0.0) - 1e-4).abs() < 1e-16);
    }

    fn leaky_sum(g: &mut Graph<f64>, p: &[Tensor<f64>]) -> Result<NodeId, TensorError> {
        let x = g.param(0, p[0].clone());
        let y = g.leaky_relu(x, 0.01);
        let y = g.reshape(y, &[1, 1])?;
        let zero = g.constant(Tensor::zeros(&[1, 1]));
        g.add(y, zero)
    }

    #[test]
    fn step_shrinks_away_from_a_kink() {
        // 3e-6 above the kink: eps = 1e-4 and 1e-5 straddle it, 1e-6 does not.
        let params = vec![Tensor::from_vec(&[1], vec![3e-6]).unwrap()];
        let el = ParamElement { slot: 0, index: 0 };
        let straddling = numeric_gradient(&params, el, 1e-4, &mut leaky_sum).unwrap();
        assert!((straddling - 0.5).abs() < 0.1, "{straddling}");
        let smooth = smooth_numeric_gradient(&params, el, 1e-4, &mut leaky_sum).unwrap().unwrap();
        assert!((smooth - 1.0).abs() < 1e-6, "{smooth}");
        let report = grad_check(&params, None, 1e-4, leaky_sum).unwrap();
        assert_eq!((report.checked, report.kinked), (1, 0));
        assert!(report.max_rel_error < 1e-6);
    }

    #[test]
    fn element_on_a_kink_is_reported() {
        let params = vec![Tensor::from_vec(&[2], vec![0.0, 0.5]).unwrap()];
        let report = grad_check(&params, None, 1e-4, |g, p| {
            let x = g.param(0, p[0].clone());
            let y = g.leaky_relu(x, 0.01);
            let t = g.constant(Tensor::zeros(&[2]));
            g.mse(y, t)
        })
        .unwrap();
        assert_eq!((report.checked, report.kinked), (1, 1));
        assert_eq!(report.worst, Some(ParamElement { slot: 0, index: 1 }));
    }
}
