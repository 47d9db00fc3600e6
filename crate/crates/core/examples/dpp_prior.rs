//! Spatial DPP prior on a small coarse grid: exact normalisation, sample
//! statistics and the Monte-Carlo KL term.
//!
//! `cargo run --release --example dpp_prior -- [rho] [ell]`

use segstitch::dpp::{dpp_expected_cardinality, dpp_log_prob, grid_kl_mc, DppSampler, KernelMatrix, KernelParams};
use segstitch::grid::{BinaryField, ProbField};
use segstitch::rng::{seeded, stream_rng, Stream};

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let rho: f64 = args.get(1).map_or(Ok(0.5), |s| s.parse())?;
    let ell: f64 = args.get(2).map_or(Ok(1.0), |s| s.parse())?;
    let kernel = KernelMatrix::rbf(3, 3, KernelParams::new(rho, ell)?)?;

    let n = kernel.len();
    let total: f64 = (0..1u64 << n).map(|m| dpp_log_prob(&kernel, &BinaryField::from_bits(3, 3, m)).map(f64::exp)).sum::<Result<f64, _>>()?;
    println!("sum over all 2^{n} subsets: {total:.12}");
    println!("expected cardinality: {:.4}", dpp_expected_cardinality(&kernel)?);

    let sampler = DppSampler::new(&kernel)?;
    let mut rng = stream_rng(7, Stream::Sample, 0);
    let draws = 20_000;
    let mut hist = vec![0usize; n + 1];
    for _ in 0..draws {
        hist[sampler.sample(&mut rng).cardinality()] += 1;
    }
    println!("cardinality histogram over {draws} draws:");
    for (k, c) in hist.iter().enumerate().filter(|(_, &c)| c > 0) {
        println!("  |w|={k}: {:.4}", *c as f64 / draws as f64);
    }

    let p = ProbField::constant(3, 3, 0.2)?;
    let kl = grid_kl_mc(&p, &kernel, 10_000, &mut seeded(11))?;
    println!("KL[Bernoulli(0.2) || DPP] ~ {kl:.4}");
    Ok(())
}
