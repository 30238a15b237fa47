//! Needs a local copy of the archive: set `EEGMMI_DATA_DIR` to a directory
//! holding `S001/S001R04.edf`, `S001/S001R08.edf` and `S001/S001R12.edf`.

use std::path::PathBuf;

use eegmi_core::edf::container::{decode, encode, EpochSet};
use eegmi_core::edf::{extract_epochs, parse_edf, record_path, IMAGERY_RUNS};

#[test]
#[ignore = "requires EEGMMI_DATA_DIR with subject 1 imagery runs"]
fn subject_one_imagery_runs() {
    let dir = PathBuf::from(std::env::var("EEGMMI_DATA_DIR").expect("EEGMMI_DATA_DIR not set"));
    let mut epochs = Vec::new();
    for run in IMAGERY_RUNS {
        let rec = parse_edf(&dir.join(record_path(1, run))).unwrap();
        assert_eq!(rec.channels.len(), 64);
        assert_eq!(rec.sample_rate, 160.0);
        epochs.extend(extract_epochs(&rec, 656).unwrap().epochs);
    }
    assert_eq!(epochs.len(), 45);
    let set = EpochSet::from_epochs(epochs, 160.0).unwrap();
    assert_eq!(decode(&encode(&set).unwrap()).unwrap(), set);
}
