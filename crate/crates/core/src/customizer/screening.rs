use crate::customizer::ParamBox;
use crate::vivace::{ParamName, VivaceConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScreeningReport {
    /// |Pearson correlation| of parameter value against reward.
    pub correlations: Vec<(ParamName, f64)>,
    pub selected: Vec<ParamName>,
    /// Every probe: (parameter, value, reward).
    pub probes: Vec<(ParamName, f64, f64)>,
}

/// Pearson correlation; zero when either side has no variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return 0.0;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs[..n].iter().zip(&ys[..n]) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// The `k` names with the largest scores; ties keep input order.
pub fn select_top(scores: &[(ParamName, f64)], k: usize) -> Vec<ParamName> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].1.total_cmp(&scores[a].1).then(a.cmp(&b)));
    order.into_iter().take(k).map(|i| scores[i].0).collect()
}

/// One-at-a-time probing of every parameter in the box. Each probe
/// evaluates `eval` on the safe configuration with one parameter moved to
/// an evenly spaced point of its range.
pub fn screen_parameters<F>(
    param_box: &ParamBox,
    safe: &VivaceConfig,
    probes_per_param: usize,
    budget: usize,
    k_active: usize,
    mut eval: F,
) -> Result<ScreeningReport>
where
    F: FnMut(&VivaceConfig) -> Result<f64>,
{
    let need = probes_per_param * param_box.params().len();
    if probes_per_param < 2 || budget < need {
        return Err(Error::invalid(
            "budget",
            format!("need at least {need} evaluations with >= 2 probes per parameter, budget is {budget}"),
        ));
    }
    let mut correlations = Vec::new();
    let mut probes = Vec::new();
    for p in param_box.params() {
        let mut xs = Vec::with_capacity(probes_per_param);
        let mut ys = Vec::with_capacity(probes_per_param);
        for i in 0..probes_per_param {
            let v = p.lower + (p.upper - p.lower) * i as f64 / (probes_per_param - 1) as f64;
            let mut cfg = safe.clone();
            cfg.set(p.name, v);
            cfg.validate()?;
            let r = eval(&cfg)?;
            xs.push(v);
            ys.push(r);
            probes.push((p.name, v, r));
        }
        correlations.push((p.name, pearson(&xs, &ys).abs()));
    }
    let selected = select_top(&correlations, k_active);
    Ok(ScreeningReport {
        correlations,
        selected,
        probes,
    })
}
