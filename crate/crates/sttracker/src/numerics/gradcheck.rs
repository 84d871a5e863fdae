use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParameterSet;
use super::tensor::{NumericsError, Result, Tensor};

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn worst(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }
}

// Relative-error floor: below this gradient magnitude the central-difference
// estimate itself is noise-limited, so the comparison degrades to absolute.
const REL_FLOOR: f64 = 1e-4;

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare analytic gradients of a scalar function against central finite
/// differences. At most `max_coords` coordinates are probed per parameter
/// (all of them when the tensor is at least that small).
pub fn finite_diff_check<F>(
    f: F,
    params: &ParameterSet,
    epsilon: f64,
    tolerance: f64,
    max_coords: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&ParameterSet) -> Result<Tensor>,
{
    if epsilon <= 0.0 {
        return Err(NumericsError::Contract("epsilon must be positive".into()));
    }
    let base = params.deep_clone();
    base.zero_grads();
    let loss = f(&base)?;
    if !loss.item().is_finite() {
        return Err(NumericsError::NonFinite("loss is not finite".into()));
    }
    loss.backward()?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x5ead);
    let mut entries = Vec::new();
    for (name, tensor) in base.iter() {
        let analytic = tensor.grad().unwrap_or_else(|| vec![0.0; tensor.numel()]);
        let mut coords: Vec<usize> = (0..tensor.numel()).collect();
        if coords.len() > max_coords {
            coords.shuffle(&mut rng);
            coords.truncate(max_coords);
        }
        let mut max_err = 0.0f64;
        for &idx in &coords {
            // retry at smaller steps when the first window fails: piecewise
            // activations (relu, max-pooling) put kinks arbitrarily close to
            // the base point, and a kink inside the window breaks the central
            // difference even though the one-sided gradient is correct. A true
            // gradient bug stays wrong at every step size.
            let mut err = f64::INFINITY;
            for shrink in [1.0, 0.1, 0.01] {
                let eps = epsilon * shrink;
                let plus = f(&base.perturbed(name, idx, eps)?)?.item();
                let minus = f(&base.perturbed(name, idx, -eps)?)?.item();
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(NumericsError::NonFinite(format!(
                        "perturbed loss not finite at {name}[{idx}]"
                    )));
                }
                let numeric = (plus - minus) / (2.0 * eps);
                err = err.min(rel_error(analytic[idx], numeric));
                if err < tolerance {
                    break;
                }
            }
            max_err = max_err.max(err);
        }
        entries.push(ParamCheck {
            name: name.clone(),
            max_rel_error: max_err,
            coords_checked: coords.len(),
            pass: max_err < tolerance,
        });
    }
    Ok(GradCheckReport { entries, tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_l2_loss_passes_tightly() {
        let mut ps = ParameterSet::new(5);
        ps.init_uniform("w", &[3, 4], 3).unwrap();
        ps.init_uniform("b", &[4], 3).unwrap();
        let x = Tensor::from_vec(&[2, 3], vec![0.3, -0.8, 0.1, 0.9, 0.4, -0.5]).unwrap();
        let f = move |p: &ParameterSet| {
            let y = x.linear(p.get("w")?, p.get("b")?)?;
            y.mul(&y)?.sum_all()?.scale(0.5)
        };
        let report = finite_diff_check(f, &ps, 1e-5, 1e-6, 1000).unwrap();
        assert!(report.pass(), "worst {}", report.worst());
    }

    #[test]
    fn constant_function_has_zero_grads() {
        let mut ps = ParameterSet::new(1);
        ps.init_uniform("w", &[4], 4).unwrap();
        let f = |_p: &ParameterSet| Ok(Tensor::scalar(3.0));
        let report = finite_diff_check(f, &ps, 1e-5, 1e-4, 100).unwrap();
        assert!(report.pass());
        assert!(report.worst() == 0.0);
    }

    #[test]
    fn per_op_gradients_match_fd() {
        // one composite touching conv2d, softmax, bilinear, relu, sigmoid
        let mut ps = ParameterSet::new(9);
        ps.init_uniform("cw", &[3, 3, 2, 2], 18).unwrap();
        ps.init_uniform("cb", &[2], 18).unwrap();
        ps.init_uniform("locs", &[4, 2], 1).unwrap();
        let x = Tensor::from_vec(
            &[4, 4, 2],
            (0..32).map(|i| ((i * 7 % 13) as f64 - 6.0) / 7.0).collect(),
        )
        .unwrap();
        let f = move |p: &ParameterSet| {
            let y = x.conv2d(p.get("cw")?, p.get("cb")?, 1, 1)?.relu()?;
            // scale locations into the grid so fd steps stay off lattice lines
            let locs = p.get("locs")?.scale(1.7)?;
            let s = y.bilinear_sample(&locs)?;
            let sm = s.softmax(1)?;
            sm.sigmoid()?.sum_all()
        };
        let report = finite_diff_check(f, &ps, 1e-5, 1e-4, 50).unwrap();
        assert!(report.pass(), "worst {}", report.worst());
    }
}
