//! Gumbel-max code selection follows softmax(r); eval mode takes the argmax.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vqapc::model::{vq_forward_eval, vq_forward_train, vq_logits, Codebook, GumbelSampler};
use vqapc::numerics::{softmax_rows, Tensor};

fn main() -> vqapc::Result<()> {
    let mut cb = Codebook::<f64>::zeros(1, 5, 2);
    cb.projection = Tensor::from_rows(&[vec![1.0, 0.5, 0.0, -0.5, -1.0]])?;
    cb.bias = Tensor::new(vec![5], vec![0.0, 0.3, 0.6, 0.2, 0.0])?;
    cb.codes = Tensor::from_rows(&(0..5).map(|i| vec![i as f64, -(i as f64)]).collect::<Vec<_>>())?;
    let h = [0.8];

    let r = vq_logits(&h, &cb)?;
    let want = softmax_rows(&Tensor::new(vec![1, 5], r.clone())?).into_data();
    let mut noise = GumbelSampler::new(ChaCha8Rng::seed_from_u64(0));
    let draws = 50_000;
    let mut counts = [0usize; 5];
    for _ in 0..draws {
        counts[vq_forward_train(&h, &cb, 0.1, &mut noise)?.index] += 1;
    }
    println!("code  softmax(r)  empirical");
    for k in 0..5 {
        println!("{k:>4}  {:>10.4}  {:>9.4}", want[k], counts[k] as f64 / draws as f64);
    }
    let (z, k) = vq_forward_eval(&h, &cb)?;
    println!("eval picks code {k}, vector {z:?}");
    Ok(())
}
