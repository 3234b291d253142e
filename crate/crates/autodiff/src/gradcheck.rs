use crate::error::{AutodiffError, Result};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    /// Normwise relative error `‖g_ad − g_fd‖ / max(‖g_ad‖, ‖g_fd‖)` per input.
    pub per_input: Vec<f64>,
    pub max_rel_err: f64,
}

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences with step `h`, for each input given as `(shape, values)`.
pub fn gradcheck<F>(f: &F, inputs: &[(Vec<usize>, Vec<f64>)], h: f64) -> Result<GradcheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let tape = Tape::new();
    let leaves = inputs
        .iter()
        .map(|(s, v)| Tensor::leaf(&tape, s.clone(), v.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&leaves)?;
    let grads = loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|t| grads.get_or_zeros(t)).collect();

    let eval = |values: &[Vec<f64>]| -> Result<f64> {
        let ts = inputs
            .iter()
            .zip(values)
            .map(|((s, _), v)| Tensor::constant(s.clone(), v.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = f(&ts)?;
        if out.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(out.shape().to_vec()));
        }
        Ok(out.item())
    };

    let mut values: Vec<Vec<f64>> = inputs.iter().map(|(_, v)| v.clone()).collect();
    let mut per_input = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut diff2 = 0.0;
        let mut an2 = 0.0;
        let mut fd2 = 0.0;
        for i in 0..values[k].len() {
            let orig = values[k][i];
            values[k][i] = orig + h;
            let up = eval(&values)?;
            values[k][i] = orig - h;
            let down = eval(&values)?;
            values[k][i] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = analytic[k][i];
            diff2 += (an - fd) * (an - fd);
            an2 += an * an;
            fd2 += fd * fd;
        }
        let denom = an2.sqrt().max(fd2.sqrt()).max(1e-10);
        per_input.push(diff2.sqrt() / denom);
    }
    let max_rel_err = per_input.iter().cloned().fold(0.0, f64::max);
    Ok(GradcheckReport {
        per_input,
        max_rel_err,
    })
}
