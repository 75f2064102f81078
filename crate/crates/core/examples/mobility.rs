//! Tabulates a degenerate-looking polynomial mobility and its mollified
//! versions together with the bounds carried by each.
//!
//! `cargo run --release --example mobility -- [k...]`

use bscahn::physics::{regularize_mobility, MobilitySpec};

fn main() -> bscahn::Result<()> {
    let ks: Vec<usize> = std::env::args()
        .skip(1)
        .map(|s| s.parse().unwrap())
        .collect();
    let ks = if ks.is_empty() { vec![4, 16, 64] } else { ks };
    let base = MobilitySpec::polynomial(vec![1.0, 0.0, -0.8]);
    println!("base: m*={} M*={}", base.m_star, base.big_m_star);
    let regs: Vec<MobilitySpec> = ks
        .iter()
        .map(|&k| regularize_mobility(&base, k))
        .collect::<Result<_, _>>()?;
    print!("{:>6} {:>10}", "s", "m");
    for k in &ks {
        print!(" {:>10} {:>10}", format!("m_{k}"), format!("m_{k}''"));
    }
    println!();
    for i in 0..=10 {
        let s = -1.0 + 0.2 * i as f64;
        print!("{s:>6.2} {:>10.6}", base.eval(s));
        for r in &regs {
            print!(" {:>10.6} {:>10.4}", r.eval(s), r.second_deriv(s));
        }
        println!();
    }
    for (k, r) in ks.iter().zip(&regs) {
        let sup = (0..=200)
            .map(|i| (r.eval(-1.0 + 0.01 * i as f64) - base.eval(-1.0 + 0.01 * i as f64)).abs())
            .fold(0.0, f64::max);
        println!(
            "k={k}: sup |m_k - m| = {sup:.3e}, bounds [{}, {}]",
            r.m_star, r.big_m_star
        );
    }
    Ok(())
}
