//! Compares backprop gradients of a small MLP with central differences.

use robustops::data::make_synthetic;
use robustops::nn::{Architecture, Model};
use robustops::Result;

fn main() -> Result<()> {
    let model = Model::new(Architecture::Mlp { hidden: 16 }, 0)?;
    let data = make_synthetic(1, 4, 0)?;
    let (x, y) = data.batch(&[0, 1, 2, 3])?;
    let x = x.reshaped(vec![4, 784])?;
    let h = 1e-5;

    let mut work = model.clone();
    work.compute_param_grads(&x, &y)?;
    let grads = work.param_grads();
    let params = model.params();
    println!("{:>8} {:>14} {:>14} {:>10}", "param", "backprop", "central diff", "rel err");
    for i in (0..params.len()).step_by(params.len() / 8) {
        let mut p = params.clone();
        p[i] += h;
        let mut plus = model.clone();
        plus.set_params(&p)?;
        p[i] -= 2.0 * h;
        let mut minus = model.clone();
        minus.set_params(&p)?;
        let fd = (plus.loss(&x, &y)?.mean_loss - minus.loss(&x, &y)?.mean_loss) / (2.0 * h);
        let rel = (grads[i] - fd).abs() / grads[i].abs().max(fd.abs()).max(1e-12);
        println!("{i:>8} {:>14.6e} {fd:>14.6e} {rel:>10.2e}", grads[i]);
    }
    Ok(())
}
