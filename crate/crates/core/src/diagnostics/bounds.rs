use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::schedulers::StrategySpec;

/// `5 F0/(gamma T) + 25 L gamma sigma^2 + 35000 L^2 gamma^2 Phi`.
pub fn theorem3_bound(f0: f64, l: f64, gamma: f64, t: usize, sigma_sq: f64, phi: f64) -> f64 {
    5.0 * f0 / (gamma * t as f64) + 25.0 * l * gamma * sigma_sq + 35000.0 * l * l * gamma * gamma * phi
}

/// `7 F1/(gamma T) + 2600 L^2 gamma^2 (tau_C - 1)^2 G^2 + 2600 L gamma sigma^2
/// + 106000 L^2 gamma^2 Phi~`.
#[allow(clippy::too_many_arguments)]
pub fn theorem4_bound(
    f1: f64,
    l: f64,
    gamma: f64,
    t: usize,
    sigma_sq: f64,
    tau_c: usize,
    g: f64,
    phi_tilde: f64,
) -> f64 {
    let lg2 = l * l * gamma * gamma;
    let c = tau_c.saturating_sub(1) as f64;
    7.0 * f1 / (gamma * t as f64)
        + 2600.0 * lg2 * c * c * g * g
        + 2600.0 * l * gamma * sigma_sq
        + 106000.0 * lg2 * phi_tilde
}

/// Mean of the per-chunk correlations plus `nu^2 / T`.
pub fn phi(sigma_sq_per_chunk: &[f64], nu_sq: f64, t: usize) -> f64 {
    let mean = if sigma_sq_per_chunk.is_empty() {
        0.0
    } else {
        sigma_sq_per_chunk.iter().sum::<f64>() / sigma_sq_per_chunk.len() as f64
    };
    mean + if t == 0 { 0.0 } else { nu_sq / t as f64 }
}

/// Tuned-stepsize rule per method. The bounded-gradient variants of pure
/// async (with and without waiting) rely on the `G` bound instead of `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StepsizeRule {
    Pure,
    MiniBatch,
    PureWaiting,
    Reshuffling,
    Random,
    RandomWaiting,
    Shuffled,
    PureBounded,
    PureWaitingBounded,
}

impl StepsizeRule {
    pub const ALL: [StepsizeRule; 9] = [
        StepsizeRule::Pure,
        StepsizeRule::MiniBatch,
        StepsizeRule::PureWaiting,
        StepsizeRule::Reshuffling,
        StepsizeRule::Random,
        StepsizeRule::RandomWaiting,
        StepsizeRule::Shuffled,
        StepsizeRule::PureBounded,
        StepsizeRule::PureWaitingBounded,
    ];

    pub fn for_strategy(spec: &StrategySpec) -> Self {
        match spec {
            StrategySpec::Pure => StepsizeRule::Pure,
            StrategySpec::PureWaiting { .. } => StepsizeRule::PureWaiting,
            StrategySpec::Random => StepsizeRule::Random,
            StrategySpec::RandomWaiting { .. } => StepsizeRule::RandomWaiting,
            StrategySpec::Shuffled { .. } => StepsizeRule::Shuffled,
            StrategySpec::MiniBatch { .. } => StepsizeRule::MiniBatch,
            StrategySpec::Reshuffling { .. } => StepsizeRule::Reshuffling,
        }
    }

    fn name(self) -> &'static str {
        match self {
            StepsizeRule::Pure => "pure",
            StepsizeRule::MiniBatch => "minibatch",
            StepsizeRule::PureWaiting => "pure-wait",
            StepsizeRule::Reshuffling => "rr",
            StepsizeRule::Random => "random",
            StepsizeRule::RandomWaiting => "random-wait",
            StepsizeRule::Shuffled => "shuffled",
            StepsizeRule::PureBounded => "pure-bounded",
            StepsizeRule::PureWaitingBounded => "pure-wait-bounded",
        }
    }
}

impl fmt::Display for StepsizeRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StepsizeRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::param(format!("unknown stepsize rule {s:?}")))
    }
}

/// Problem constants entering the tuned stepsizes. `f` is `F0` for the
/// received-process rules and `F1` for the assigned-process ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepsizeParams {
    pub l: f64,
    pub f: f64,
    pub sigma_sq: f64,
    pub zeta_sq: f64,
    pub g: f64,
    pub t: usize,
    pub tau_max: usize,
    pub tau_c: usize,
    pub n: usize,
    pub b: usize,
}

/// `num / den`, with an empty constraint (`+inf`) when `den == 0`.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

/// Minimum of the rule's branches with every hidden constant set to 1,
/// intersected with the hard stepsize caps of the matching bound.
pub fn recommended_stepsize(rule: StepsizeRule, p: &StepsizeParams) -> Result<f64> {
    if !(p.l > 0.0 && p.l.is_finite()) {
        return Err(Error::param(format!("smoothness L must be positive, got {}", p.l)));
    }
    for (name, v) in [("F", p.f), ("sigma^2", p.sigma_sq), ("zeta^2", p.zeta_sq), ("G", p.g)] {
        if v.is_nan() || v < 0.0 {
            return Err(Error::param(format!("{name} must be nonnegative, got {v}")));
        }
    }
    let l = p.l;
    let f = p.f;
    let t = p.t as f64;
    let n = p.n.max(1) as f64;
    let b = p.b.max(1) as f64;
    let tau_max = p.tau_max.max(1) as f64;
    let tau_c = p.tau_c.max(1) as f64;
    let (s2, z2, g2) = (p.sigma_sq, p.zeta_sq, p.g * p.g);

    let branches: Vec<f64> = match rule {
        StepsizeRule::Pure => vec![1.0 / (20.0 * l * (tau_max * tau_c).sqrt()), ratio(f, l * s2 * t).sqrt()],
        StepsizeRule::MiniBatch => vec![1.0 / (20.0 * l), ratio(f * b, l * t * z2).sqrt()],
        StepsizeRule::PureWaiting => vec![
            b / (20.0 * l * (b * tau_max * tau_c).sqrt()),
            b / (6.0 * l),
            ratio(f * b, l * s2 * t).sqrt(),
        ],
        StepsizeRule::Reshuffling => vec![1.0 / (20.0 * l * n), ratio(f, l * l * n * t * z2).cbrt()],
        StepsizeRule::Random => vec![
            1.0 / (30.0 * l * tau_c),
            ratio(f, l * t * s2).sqrt(),
            ratio(f, l * t * z2).sqrt(),
            ratio(f, l * l * tau_c * tau_c * t * g2).cbrt(),
        ],
        StepsizeRule::RandomWaiting => vec![
            b / (30.0 * l * b.max(tau_c)),
            b / (6.0 * l),
            ratio(f * b, l * t * s2).sqrt(),
            ratio(f * b, l * t * z2).sqrt(),
            ratio(f * b * b, l * l * tau_c * tau_c * t * g2).cbrt(),
        ],
        StepsizeRule::Shuffled => vec![
            1.0 / (30.0 * l * n),
            ratio(f, l * l * n * z2 * t).cbrt(),
            ratio(f, l * l * n * n * g2 * z2 * t).cbrt(),
        ],
        StepsizeRule::PureBounded => vec![
            1.0 / (30.0 * l * tau_c),
            ratio(f, l * l * tau_c * tau_c * g2 * t).cbrt(),
        ],
        StepsizeRule::PureWaitingBounded => vec![
            1.0 / (30.0 * l * tau_c),
            ratio(f, l * l * tau_c * tau_c * g2 * t * b).cbrt(),
        ],
    };
    Ok(branches.into_iter().fold(f64::INFINITY, f64::min))
}
