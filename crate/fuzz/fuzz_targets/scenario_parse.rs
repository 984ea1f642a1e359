#![no_main]

use libfuzzer_sys::fuzz_target;
use piecewise_market::scenario::Scenario;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(scn) = Scenario::from_json(text) {
        if let Ok(grid) = scn.grid.grid() {
            let _ = scn.checkpoint_indices(&grid);
        }
        let _ = scn.model.validate();
    }
});
