#![no_main]

use libfuzzer_sys::fuzz_target;
use piecewise_market::io::{read_ensemble_csv, write_ensemble_csv};
use piecewise_market::ustate::TimeGrid;

fuzz_target!(|data: &[u8]| {
    let grid = TimeGrid::uniform(1.0, 8).unwrap();
    let Ok(paths) = read_ensemble_csv(data, &grid) else { return };
    // whatever parses must survive a round trip unchanged
    let refs: Vec<_> = paths.iter().map(|(id, p)| (*id, p)).collect();
    let mut buf = Vec::new();
    write_ensemble_csv(&mut buf, &refs).unwrap();
    let again = read_ensemble_csv(buf.as_slice(), &grid).unwrap();
    assert_eq!(again, paths);
});
