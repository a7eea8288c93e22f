//! The three steps that turn raw RRS factors into child counts:
//! normalization to the pixel budget, rate control and stochastic rounding.

use nrrs::rng::RngStream;
use nrrs::rrs::{apply_rate_control, bernstein_bound, normalize, realize_with_rng, RateControl};

fn main() -> nrrs::Result<()> {
    let npx = 1000;
    let mut rng = RngStream::new(7, 0);
    // a heavy-tailed batch: most paths want roulette, a few want to split
    let q_orig: Vec<f32> = (0..npx)
        .map(|_| {
            let u = rng.next_f32();
            if u < 0.1 {
                8.0 * rng.next_f32()
            } else {
                0.8 * rng.next_f32()
            }
        })
        .collect();
    let (q_norm, f_norm) = normalize(&q_orig, npx)?;
    println!("sum q_orig = {:.1}, F_norm = {f_norm:.4}", q_orig.iter().sum::<f32>());
    println!("sum q_norm = {:.1}", q_norm.iter().sum::<f32>());

    let mut rc = RateControl::new(0.85, 0.01)?;
    println!(
        "P(overflow) bound at f_rate {}: {:.3e}",
        rc.f_rate,
        bernstein_bound(rc.f_rate as f64, npx)
    );
    let mut overflows = 0;
    let trials = 2000;
    for _ in 0..trials {
        let q_rate = apply_rate_control(&q_norm, &rc);
        let (_, total) = realize_with_rng(&q_rate, &mut rng)?;
        if total > npx as u64 {
            overflows += 1;
            rc.record_overflow();
        }
    }
    println!("{overflows} of {trials} realizations overflowed; alpha is now {:.4}", rc.alpha);
    Ok(())
}
