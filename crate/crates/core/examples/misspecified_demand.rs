//! The linear-valuation market that the GLM family does not contain, the
//! polynomial context expansion PwP uses there, and the price each law recommends.
//!
//! Run with `cargo run --example misspecified_demand`.

use nalgebra::DVector;
use pricing_lab::env::{expand_context, DemandKind};
use pricing_lab::LinkModel;

fn main() -> pricing_lab::Result<()> {
    let link = LinkModel::gaussian(0.5)?;
    let (u, beta) = (0.6, 0.5);
    for kind in [DemandKind::Glm, DemandKind::MisspecifiedValuation] {
        let p = kind.optimal_price(&link, u, beta)?;
        println!(
            "{kind:?}: optimal price {p:.4}, purchase probability {:.4}",
            kind.purchase_probability(&link, u, beta, p)
        );
    }
    let glm_price = DemandKind::Glm.optimal_price(&link, u, beta)?;
    println!(
        "posting the GLM price in the valuation market loses {:.5} per round",
        DemandKind::MisspecifiedValuation.regret(&link, u, beta, glm_price)?
    );

    let x = DVector::from_vec(vec![0.3, 0.8]);
    let x0 = DVector::from_vec(vec![0.5, 0.5]);
    let expanded = expand_context(&x, &x0, &[0, 1])?;
    println!("\nx = {:?}", x.as_slice());
    println!(
        "expanded = {:?} (norm {:.4})",
        expanded.as_slice(),
        expanded.norm()
    );
    Ok(())
}
