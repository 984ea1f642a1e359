#![no_main]

use libfuzzer_sys::fuzz_target;
use piecewise_market::tree::{na1_probe, EventTree, TreeFile};

fuzz_target!(|data: &[u8]| {
    let Ok(file) = serde_json::from_slice::<TreeFile>(data) else { return };
    let Ok(tree) = EventTree::from_file(&file) else { return };
    // keep the one-step enumeration cheap
    if tree.len() <= 64 && tree.nodes().iter().all(|n| n.children.len() <= 6) {
        let _ = na1_probe(&tree);
    }
});
