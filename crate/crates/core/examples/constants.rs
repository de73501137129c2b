//! Print the pricing constants for the reference setting.

use pricing_lab::{derive_constants, LinkModel};

fn main() -> pricing_lab::Result<()> {
    let link = LinkModel::gaussian(0.5)?;
    let constants = derive_constants(&link, 0.3, 2, 1 << 16)?;
    println!("{}", serde_json::to_string_pretty(&constants)?);
    Ok(())
}
