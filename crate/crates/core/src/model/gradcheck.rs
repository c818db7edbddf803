use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use super::{ParamGroup, Seq2Seq};
use crate::corpus::EncodedSample;
use crate::{seed, Result};

#[derive(Debug, Clone, Serialize)]
pub struct GradientCheck {
    pub checked: usize,
    pub max_relative_error: f64,
    pub per_group: BTreeMap<ParamGroup, f64>,
    /// Tensor, flat index, analytic and numeric gradient of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Compares backprop gradients against central differences with step `h`
/// for about `count` parameters spread over every tensor. Embedding
/// coordinates are drawn from rows the batch actually uses.
///
/// The differenced quantity is the loss minus its constant `ln V` offset,
/// so the comparison is limited by rounding at the scale of the logits
/// rather than at the scale of the loss.
pub fn gradient_check(
    model: &Seq2Seq,
    batch: &[EncodedSample],
    h: f64,
    count: usize,
    rng_seed: u64,
) -> Result<GradientCheck> {
    let refs: Vec<&EncodedSample> = batch.iter().collect();
    let (_, grads) = model.loss_and_gradient(&refs)?;
    let mut rng = seed::rng(rng_seed);
    let mut probe = model.clone();
    let n_tensors = model.params.tensors().len();
    let per_tensor = count.div_ceil(n_tensors);

    let used_inputs: Vec<usize> = batch.iter().flat_map(|s| s.input.clone()).collect();
    let used_targets: Vec<usize> = batch
        .iter()
        .flat_map(|s| s.target[..s.target.len() - 1].to_vec())
        .collect();

    let mut report = GradientCheck {
        checked: 0,
        max_relative_error: 0.0,
        per_group: BTreeMap::new(),
        worst: None,
    };
    for (ti, (name, group, tensor)) in model.params.tensors().into_iter().enumerate() {
        for _ in 0..per_tensor {
            let idx = match name {
                "src_embed" | "tgt_embed" => {
                    let rows = if name == "src_embed" {
                        &used_inputs
                    } else {
                        &used_targets
                    };
                    let row = rows[rng.random_range(0..rows.len())];
                    row * tensor.cols + rng.random_range(0..tensor.cols)
                }
                _ => rng.random_range(0..tensor.len()),
            };
            let original = tensor.data[idx];
            let mut at = |value: f64| -> Result<f64> {
                probe.params.tensors_mut()[ti].2.data[idx] = value;
                probe.shifted_loss(&refs)
            };
            let plus = at(original + h)?;
            let minus = at(original - h)?;
            probe.params.tensors_mut()[ti].2.data[idx] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.tensors()[ti].2.data[idx];
            let err = relative_error(analytic, numeric);
            let worst = report.per_group.entry(group).or_insert(0.0);
            *worst = worst.max(err);
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((name.to_string(), idx, analytic, numeric));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
