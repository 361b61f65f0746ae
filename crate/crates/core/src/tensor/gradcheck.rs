use super::{Result, Tensor, TensorError};

/// Compares reverse-mode gradients of `f` against central finite differences.
///
/// Returns the maximum over all coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    if !(eps > 0.0) {
        return Err(TensorError::Invalid {
            op: "grad_check",
            msg: format!("eps must be positive, got {eps}"),
        });
    }
    let leaves: Vec<Tensor> = params.iter().map(Tensor::to_parameter).collect();
    let grads = f(&leaves)?.backward()?;
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|p| grads.get_or_zeros(p)).collect();

    let mut worst: f64 = 0.0;
    for (pi, p) in params.iter().enumerate() {
        for j in 0..p.numel() {
            let eval = |delta: f64| -> Result<f64> {
                let shifted: Vec<Tensor> = params
                    .iter()
                    .enumerate()
                    .map(|(qi, q)| {
                        if qi == pi {
                            let mut d = q.data().to_vec();
                            d[j] += delta;
                            Tensor::new(q.shape(), d)
                        } else {
                            Ok(q.detach())
                        }
                    })
                    .collect::<Result<_>>()?;
                Ok(f(&shifted)?.item())
            };
            let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            let a = analytic[pi][j];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
