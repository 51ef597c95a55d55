use super::{Graph, NodeId, Tensor, TensorError};

/// Denominator floor for relative error, so coordinates whose true gradient
/// is zero are judged on absolute error instead of exploding.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn from_pairs(analytic: Vec<f64>, numeric: Vec<f64>, tol: f64) -> Self {
        let rel_errors: Vec<f64> = analytic
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| relative_error(a, n))
            .collect();
        let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
        let passed = rel_errors.iter().all(|e| e.is_finite()) && max_rel_error <= tol;
        GradCheckReport {
            analytic,
            numeric,
            rel_errors,
            max_rel_error,
            tol,
            passed,
        }
    }
}

fn evaluate<F, E>(f: &F, x: &Tensor) -> Result<f64, E>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId, E>,
    E: From<TensorError>,
{
    let mut g = Graph::new();
    let input = g.leaf(x.clone());
    let out = f(&mut g, input)?;
    if g.value(out).numel() != 1 {
        return Err(TensorError::NonScalarLoss(g.shape(out).to_vec()).into());
    }
    Ok(g.value(out).item())
}

/// Compares the reverse-mode gradient of scalar `f` at `x` against central
/// differences with step `eps`.
///
/// `f` is evaluated twice at `x` first; any difference between the two
/// results means the oracle cannot be trusted and yields
/// [`TensorError::OracleInvalid`].
pub fn grad_check<F, E>(f: F, x: &Tensor, eps: f64, tol: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId, E>,
    E: From<TensorError>,
{
    let first = evaluate(&f, x)?;
    let second = evaluate(&f, x)?;
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::OracleInvalid.into());
    }

    let mut g = Graph::new();
    let input = g.leaf(x.clone());
    let out = f(&mut g, input)?;
    g.backward(out)?;
    let analytic = g
        .grad(input)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut numeric = Vec::with_capacity(x.numel());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = evaluate(&f, &probe)?;
        probe.data_mut()[i] = orig;
        numeric.push((plus - minus) / (2.0 * eps));
    }
    Ok(GradCheckReport::from_pairs(analytic, numeric, tol))
}
