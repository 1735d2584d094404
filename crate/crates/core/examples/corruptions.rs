//! PSNR of every corruption kind and severity on one toy frame.

use v2sfm::simdata::{corrupt, generate_sequence, psnr, CorruptionKind, CorruptionSpec, DatasetConfig};

fn main() -> v2sfm::Result<()> {
    let cfg = DatasetConfig {
        frames: 3,
        ..DatasetConfig::toy()
    };
    let seq = generate_sequence(&cfg, 0)?;
    let frame = &seq.frames[1];
    println!("{:<18} {}", "kind", (1..=5).map(|s| format!("{:>8}", format!("sev {s}"))).collect::<String>());
    for kind in CorruptionKind::ALL {
        let mut row = format!("{:<18}", kind.as_str());
        for sev in 1..=5 {
            let out = corrupt(frame, CorruptionSpec::new(kind, sev)?, 0)?;
            row += &format!("{:>8.2}", psnr(frame, &out));
        }
        println!("{row}");
    }
    Ok(())
}
