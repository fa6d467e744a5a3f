//! Fits the network to a noisy linear target with plain SGD.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use fedrank::nn::{init_params, predict_batch, train_epoch, MlpConfig};

fn main() -> fedrank::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let weights = [0.8, -0.4, 0.3];
    let samples: Vec<(Vec<f64>, f64)> = (0..400)
        .map(|_| {
            let x: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let noise: f64 = rng.sample(StandardNormal);
            let y = x.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() + 0.05 * noise;
            (x, y)
        })
        .collect();

    let cfg = MlpConfig {
        input_dim: 3,
        seed: 2,
        ..MlpConfig::default()
    };
    let mut params = init_params(&cfg)?;
    println!("epoch   0  loss {:.5}", params.loss(&samples)?);
    for epoch in 1..=40 {
        let r = train_epoch(&params, &samples, &cfg, &mut rng)?;
        params = r.params;
        if epoch % 10 == 0 {
            println!("epoch {epoch:>3}  loss {:.5}", params.loss(&samples)?);
        }
    }

    let probe = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    let out = predict_batch(&params, &probe)?;
    println!("unit inputs -> {:.3?} (target {:?})", out, weights);
    Ok(())
}
