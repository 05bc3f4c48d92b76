//! Build the 3-session joint-shift protocol, render it and round-trip it
//! through the on-disk dataset format.

use jascl::bench::store::{read_dataset, write_dataset};
use jascl::bench::{generate_protocol_data, ContinualProtocol};

fn main() -> jascl::Result<()> {
    let protocol = ContinualProtocol::joint_shift_3(5, 50)?;
    for (s, case) in protocol.sessions().iter().zip(std::iter::once(None).chain(protocol.cases().iter().map(Some))) {
        println!(
            "session {}: classes {:?}, {} labeled, {} unlabeled, {} test, transition {:?}",
            s.index, s.class_ids, s.labeled_count, s.unlabeled_count, s.test_count, case
        );
    }
    let data = generate_protocol_data(&protocol, (32, 32), 0)?;
    let dir = std::env::temp_dir().join("jascl-synthetic-protocol");
    let manifest = write_dataset(&dir, &protocol, &data, 0, (32, 32))?;
    let (_, back) = read_dataset(&dir)?;
    assert_eq!(back, data);
    println!("{} files written to {} and verified", manifest.files.len(), dir.display());
    Ok(())
}
