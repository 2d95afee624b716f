use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Bound, Graph, ParamSet, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Coordinate {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub samples: usize,
    pub max_rel_error: f64,
    pub worst: Option<Coordinate>,
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of the scalar built by `f` against
/// central differences on `samples` coordinates drawn (without replacement
/// where possible) from the parameters named in `only`, or from all of them.
///
/// `f` must be a pure function of the parameter values. `params` is not
/// modified.
pub fn finite_difference_check<F>(
    f: F,
    params: &ParamSet,
    epsilon: f64,
    samples: usize,
    seed: u64,
    only: Option<&[&str]>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    if !(epsilon > 0.0) || samples == 0 {
        return Err(Error::Config(format!(
            "gradient check needs epsilon > 0 and samples >= 1 (got {epsilon}, {samples})"
        )));
    }
    let mut graph = Graph::new();
    let bound = params.bind(&mut graph);
    let loss = f(&mut graph, &bound)?;
    if !graph.value(loss).item().is_finite() {
        return Err(Error::NonFinite("loss at the unperturbed point".into()));
    }
    graph.backward(loss)?;
    let grads = bound.grads(&graph, params);

    let coords: Vec<(String, usize)> = params
        .iter()
        .filter(|(name, _)| only.is_none_or(|o| o.contains(&name.as_str())))
        .flat_map(|(name, t)| (0..t.len()).map(move |i| (name.clone(), i)))
        .collect();
    if coords.is_empty() {
        return Err(Error::Config("gradient check: no coordinates selected".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if samples >= coords.len() {
        (0..coords.len()).collect()
    } else {
        sample(&mut rng, coords.len(), samples).into_vec()
    };

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut g = Graph::new();
        let b = p.bind_frozen(&mut g);
        let l = f(&mut g, &b)?;
        Ok(g.value(l).item())
    };

    let mut report = GradCheckReport {
        epsilon,
        samples: picks.len(),
        max_rel_error: 0.0,
        worst: None,
    };
    let mut probe = params.clone();
    for &k in &picks {
        let (name, index) = &coords[k];
        let orig = params.get(name).expect("sampled name exists").data()[*index];
        let set = |p: &mut ParamSet, v: f64| {
            p.get_mut(name).expect("sampled name exists").data_mut()[*index] = v;
        };
        set(&mut probe, orig + epsilon);
        let plus = eval(&probe)?;
        set(&mut probe, orig - epsilon);
        let minus = eval(&probe)?;
        set(&mut probe, orig);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss at perturbed point {name}[{index}]"
            )));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let analytic = grads.get(name).expect("gradient for every param").data()[*index];
        let rel_error = relative_error(analytic, numeric);
        if report.worst.is_none() || rel_error > report.max_rel_error {
            report.max_rel_error = rel_error;
            report.worst = Some(Coordinate {
                param: name.clone(),
                index: *index,
                analytic,
                numeric,
                rel_error,
            });
        }
    }
    Ok(report)
}
