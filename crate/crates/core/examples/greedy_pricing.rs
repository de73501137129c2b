//! The greedy price under a Gaussian survival link, and how much revenue is lost
//! by posting something else.
//!
//! Run with `cargo run --example greedy_pricing`.

use pricing_lab::LinkModel;

fn main() -> pricing_lab::Result<()> {
    let link = LinkModel::gaussian(0.5)?;

    println!(
        "{:>6} {:>6} {:>10} {:>12}",
        "u", "beta", "J(u,beta)", "revenue"
    );
    for &(u, beta) in &[(0.0, 1.0), (0.5, 1.0), (0.5, 0.5), (1.0, 0.3)] {
        let p = link.greedy_price(u, beta)?;
        println!(
            "{u:>6.2} {beta:>6.2} {p:>10.5} {:>12.5}",
            link.expected_reward(u, beta, p)?
        );
    }

    // Regret is locally quadratic in the pricing error.
    let (u, beta) = (0.5, 0.7);
    let best = link.greedy_price(u, beta)?;
    println!("\nregret around p* = {best:.5}");
    for offset in [-0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2] {
        let regret = link.instant_regret(u, beta, best + offset)?;
        println!("  p* {offset:+.2}: {regret:.6}");
    }

    let w = link.varphi_inv(0.8)?;
    println!(
        "\nvarphi^-1(0.8) = {w:.6}, varphi of that = {:.12}",
        link.varphi(w)?
    );
    Ok(())
}
