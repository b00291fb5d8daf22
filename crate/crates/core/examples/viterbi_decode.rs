//! Sample from a known two-regime HMM, then recover the hidden regimes with
//! Viterbi and compare forward likelihoods of normal and unusual windows.
//!
//! cargo run --example viterbi_decode

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqfraud::ghmm::{brute_force_loglik, log_forward, viterbi, GaussianHmm};

fn main() -> seqfraud::Result<()> {
    // Log-amount regimes: everyday spending around e^3, large purchases around e^6.
    let hmm = GaussianHmm::new(
        vec![0.8, 0.2],
        vec![vec![0.9, 0.1], vec![0.3, 0.7]],
        vec![3.0, 6.0],
        vec![0.4, 0.5],
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (obs, truth) = hmm.sample(40, &mut rng);
    let path = viterbi(&hmm, &obs)?;
    let hits = path.states.iter().zip(&truth).filter(|(a, b)| a == b).count();
    println!("viterbi recovered {hits}/{} hidden states", truth.len());
    println!("truth:   {}", truth.iter().map(|s| s.to_string()).collect::<String>());
    println!("decoded: {}", path.states.iter().map(|s| s.to_string()).collect::<String>());

    for window in [[3.1, 2.9, 3.0], [3.0, 6.2, 6.1], [1.0, 1.2, 8.0]] {
        let f = log_forward(&hmm, &window)?;
        let exact = brute_force_loglik(&hmm, &window)?;
        println!("window {window:?}: loglik {:>8.3} (enumeration {:>8.3})", f.loglik, exact);
    }
    Ok(())
}
