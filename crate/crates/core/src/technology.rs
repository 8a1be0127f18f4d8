//! Production functions and the unit-increment marginal experiment.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Output above this magnitude aborts a run.
pub const EXTREME_OUTPUT: f64 = 1e12;

const SHARE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TechError {
    #[error("input {index} is negative ({value})")]
    NegativeInput { index: usize, value: f64 },
    #[error("input {index} is NaN")]
    NanInput { index: usize },
    #[error("input vector has length {got}, technology expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("extreme output {0}")]
    ExtremeOutput(f64),
    #[error("invalid technology: {0}")]
    InvalidSpec(String),
}

/// Linear technology `Σ c_j q_j` or CES technology `A [Σ a_j q_j^ρ]^(φ/ρ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TechnologySpec {
    Linear { coeffs: Vec<f64> },
    Ces { tfp: f64, shares: Vec<f64>, rho: f64, phi: f64 },
}

/// Parameter mutations used by shocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum TechChange {
    SetTfp(f64),
    SetPhi(f64),
    SetRho(f64),
    ScaleTfp(f64),
}

impl TechnologySpec {
    pub fn linear(coeffs: Vec<f64>) -> Result<Self, TechError> {
        let spec = TechnologySpec::Linear { coeffs };
        spec.validate()?;
        Ok(spec)
    }

    /// Builds a CES technology. Shares are rescaled to sum to one.
    pub fn ces(tfp: f64, shares: Vec<f64>, rho: f64, phi: f64) -> Result<Self, TechError> {
        if shares.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(TechError::InvalidSpec("shares must be finite and non-negative".into()));
        }
        let total: f64 = shares.iter().sum();
        if total <= 0.0 {
            return Err(TechError::InvalidSpec("shares sum to zero".into()));
        }
        let shares =
            if (total - 1.0).abs() <= SHARE_TOLERANCE { shares } else { shares.iter().map(|a| a / total).collect() };
        let spec = TechnologySpec::Ces { tfp, shares, rho, phi };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), TechError> {
        match self {
            TechnologySpec::Linear { coeffs } => {
                if coeffs.is_empty() {
                    return Err(TechError::InvalidSpec("empty coefficient vector".into()));
                }
                if coeffs.iter().any(|c| !c.is_finite() || *c < 0.0) {
                    return Err(TechError::InvalidSpec("linear coefficients must be finite and non-negative".into()));
                }
            }
            TechnologySpec::Ces { tfp, shares, rho, phi } => {
                if shares.is_empty() {
                    return Err(TechError::InvalidSpec("empty share vector".into()));
                }
                if !(tfp.is_finite() && *tfp > 0.0) {
                    return Err(TechError::InvalidSpec(format!("tfp must be positive, got {tfp}")));
                }
                if !(phi.is_finite() && *phi > 0.0) {
                    return Err(TechError::InvalidSpec(format!("phi must be positive, got {phi}")));
                }
                if !rho.is_finite() || *rho == 0.0 {
                    return Err(TechError::InvalidSpec(format!("rho must be nonzero, got {rho}")));
                }
                if shares.iter().any(|a| !a.is_finite() || *a < 0.0) {
                    return Err(TechError::InvalidSpec("shares must be finite and non-negative".into()));
                }
                let total: f64 = shares.iter().sum();
                if (total - 1.0).abs() > SHARE_TOLERANCE {
                    return Err(TechError::InvalidSpec(format!("shares sum to {total}, not 1")));
                }
            }
        }
        Ok(())
    }

    /// Number of input industries.
    pub fn len(&self) -> usize {
        self.weights().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear coefficients or CES shares.
    pub fn weights(&self) -> &[f64] {
        match self {
            TechnologySpec::Linear { coeffs } => coeffs,
            TechnologySpec::Ces { shares, .. } => shares,
        }
    }
}

fn check_inputs(spec: &TechnologySpec, q: &[f64]) -> Result<(), TechError> {
    if q.len() != spec.len() {
        return Err(TechError::LengthMismatch { expected: spec.len(), got: q.len() });
    }
    for (index, &value) in q.iter().enumerate() {
        if value.is_nan() {
            return Err(TechError::NanInput { index });
        }
        if value < 0.0 {
            return Err(TechError::NegativeInput { index, value });
        }
    }
    Ok(())
}

fn guard(out: f64) -> Result<f64, TechError> {
    if !out.is_finite() || out > EXTREME_OUTPUT {
        Err(TechError::ExtremeOutput(out))
    } else {
        Ok(out)
    }
}

// CES aggregate from the inner sum. `blocked` counts inputs at zero with
// positive share, which force zero output when rho < 0.
fn ces_output(tfp: f64, rho: f64, phi: f64, sum: f64, blocked: usize) -> f64 {
    if (rho < 0.0 && blocked > 0) || sum <= 0.0 {
        0.0
    } else {
        tfp * sum.powf(phi / rho)
    }
}

fn ces_term(a: f64, q: f64, rho: f64) -> (f64, bool) {
    if a == 0.0 {
        (0.0, false)
    } else if q == 0.0 {
        (0.0, rho < 0.0)
    } else {
        (a * q.powf(rho), false)
    }
}

/// Output obtained from `inputs`.
pub fn produce(spec: &TechnologySpec, inputs: &[f64]) -> Result<f64, TechError> {
    check_inputs(spec, inputs)?;
    let out = match spec {
        TechnologySpec::Linear { coeffs } => coeffs.iter().zip(inputs).map(|(c, q)| c * q).sum(),
        TechnologySpec::Ces { tfp, shares, rho, phi } => {
            let mut sum = 0.0;
            let mut blocked = 0;
            for (&a, &q) in shares.iter().zip(inputs) {
                let (t, b) = ces_term(a, q, *rho);
                sum += t;
                blocked += b as usize;
            }
            ces_output(*tfp, *rho, *phi, sum, blocked)
        }
    };
    guard(out)
}

/// Output change from adding one unit of input `j` to `inputs`.
pub fn marginal_product(spec: &TechnologySpec, inputs: &[f64], j: usize) -> Result<f64, TechError> {
    if j >= spec.len() {
        return Err(TechError::InvalidSpec(format!("input index {j} out of range")));
    }
    let base = produce(spec, inputs)?;
    let mut bumped = inputs.to_vec();
    bumped[j] += 1.0;
    Ok(produce(spec, &bumped)? - base)
}

/// Unit-increment experiment for every input in `scope`, in one pass.
///
/// Equivalent to calling [`marginal_product`] per index. Partial sums are
/// assembled from prefix and suffix sums, so no term is ever subtracted back
/// out (CES terms with rho < 0 can span many orders of magnitude).
pub fn marginal_products(spec: &TechnologySpec, inputs: &[f64], scope: &[usize]) -> Result<Vec<f64>, TechError> {
    check_inputs(spec, inputs)?;
    let n = inputs.len();
    if let Some(&j) = scope.iter().find(|&&j| j >= n) {
        return Err(TechError::InvalidSpec(format!("input index {j} out of range")));
    }
    let term = |j: usize, q: f64| -> (f64, bool) {
        match spec {
            TechnologySpec::Linear { coeffs } => (coeffs[j] * q, false),
            TechnologySpec::Ces { shares, rho, .. } => ces_term(shares[j], q, *rho),
        }
    };
    let (terms, blocked): (Vec<f64>, Vec<bool>) = (0..n).map(|j| term(j, inputs[j])).unzip();
    // prefix[k] = Σ_{i<k} terms[i]; suffix[k] = Σ_{i>=k} terms[i]
    let mut prefix = vec![0.0; n + 1];
    for k in 0..n {
        prefix[k + 1] = prefix[k] + terms[k];
    }
    let mut suffix = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] + terms[k];
    }
    let blocked_total = blocked.iter().filter(|b| **b).count();
    let eval = |sum: f64, blocked: usize| -> Result<f64, TechError> {
        let out = match spec {
            TechnologySpec::Linear { .. } => sum,
            TechnologySpec::Ces { tfp, rho, phi, .. } => ces_output(*tfp, *rho, *phi, sum, blocked),
        };
        guard(out)
    };
    let base = eval(prefix[n], blocked_total)?;
    scope
        .iter()
        .map(|&j| {
            let (t, b) = term(j, inputs[j] + 1.0);
            let others = prefix[j] + suffix[j + 1];
            let blocked_j = blocked_total - blocked[j] as usize + b as usize;
            Ok(eval(others + t, blocked_j)? - base)
        })
        .collect()
}

/// Returns a mutated copy; the original is untouched.
pub fn mutate(spec: &TechnologySpec, change: TechChange) -> Result<TechnologySpec, TechError> {
    let mut out = spec.clone();
    match (&mut out, change) {
        (TechnologySpec::Ces { tfp, .. }, TechChange::SetTfp(v)) => *tfp = v,
        (TechnologySpec::Ces { tfp, .. }, TechChange::ScaleTfp(f)) => {
            if !(f.is_finite() && f > 0.0) {
                return Err(TechError::InvalidSpec(format!("tfp scale must be positive, got {f}")));
            }
            *tfp *= f
        }
        (TechnologySpec::Ces { phi, .. }, TechChange::SetPhi(v)) => *phi = v,
        (TechnologySpec::Ces { rho, .. }, TechChange::SetRho(v)) => *rho = v,
        (TechnologySpec::Linear { coeffs }, TechChange::ScaleTfp(f)) => {
            if !(f.is_finite() && f > 0.0) {
                return Err(TechError::InvalidSpec(format!("tfp scale must be positive, got {f}")));
            }
            coeffs.iter_mut().for_each(|c| *c *= f)
        }
        (TechnologySpec::Linear { .. }, other) => {
            return Err(TechError::InvalidSpec(format!("{other:?} does not apply to a linear technology")))
        }
    }
    out.validate()?;
    Ok(out)
}

/// Indices of inputs with a positive coefficient or share.
pub fn used_inputs(spec: &TechnologySpec) -> Vec<usize> {
    spec.weights().iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(j, _)| j).collect()
}
