//! Finite-difference verification of the gradient engine.

use super::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<40} max rel err {:>12.3e}  {}",
                e.name,
                e.max_rel_error,
                if e.passed { "pass" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "overall: max rel err {:.3e}  {}",
            self.max_rel_error,
            if self.passed { "pass" } else { "FAIL" }
        )
    }
}

/// Compares analytic gradients against central finite differences for
/// every scalar entry of every named leaf.
///
/// `f` must rebuild the scalar loss from the given leaves each call;
/// leaf values are perturbed in place by `eps` and restored. The
/// relative error for one entry is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn grad_check<F>(
    leaves: &[(String, Tensor)],
    f: F,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn() -> Result<Tensor>,
{
    if eps <= 0.0 {
        return Err(Error::invalid("grad_check: eps must be positive"));
    }

    for (_, t) in leaves {
        t.zero_grad();
    }
    let loss = f()?;
    if !loss.item().is_finite() {
        return Err(Error::NonFinite("grad_check loss"));
    }
    loss.backward()?;

    let mut entries = Vec::with_capacity(leaves.len());
    let mut overall = 0.0f64;
    for (name, leaf) in leaves {
        let analytic = leaf
            .grad()
            .map(|g| g.data)
            .unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let mut worst = 0.0f64;
        for i in 0..leaf.numel() {
            leaf.nudge(i, eps);
            let up = f()?.item();
            leaf.nudge(i, -2.0 * eps);
            let down = f()?.item();
            leaf.nudge(i, eps);
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite("grad_check evaluation"));
            }
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        overall = overall.max(worst);
        entries.push(GradCheckEntry {
            name: name.clone(),
            max_rel_error: worst,
            passed: worst < tol,
        });
    }
    Ok(GradCheckReport {
        passed: entries.iter().all(|e| e.passed),
        entries,
        max_rel_error: overall,
    })
}
