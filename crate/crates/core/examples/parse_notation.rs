//! Parse `XeYa[Gg][Zs]` layouts and print their active widths.

use complete_mue::config::{format_moe_notation, parse_moe_notation, RouterKind};

fn main() -> complete_mue::Result<()> {
    let cases = [
        ("64e8a", 16, None),
        ("64e8a2g", 16, None),
        ("128e8a1s", 512, Some(512)),
        ("128e8a4g1s", 512, Some(512)),
        ("16e4a2s", 32, Some(64)),
    ];
    println!("{:<12} {:>6} {:>8} {:>10}  canonical", "notation", "h", "shared", "H_act");
    for (text, h, shared) in cases {
        let block = parse_moe_notation(text, h, shared, RouterKind::NormalizedSoftmax)?;
        println!(
            "{text:<12} {h:>6} {:>8} {:>10}  {}",
            shared.map_or("-".to_string(), |s| s.to_string()),
            block.active_width(),
            format_moe_notation(&block)?
        );
    }
    for bad in ["8e9a", "64e8a3g", "e8a", "64e8a2g1s1s"] {
        match parse_moe_notation(bad, 16, Some(16), RouterKind::NormalizedSoftmax) {
            Ok(b) => println!("{bad}: unexpectedly parsed as {b}"),
            Err(e) => println!("{bad}: {e}"),
        }
    }
    Ok(())
}
