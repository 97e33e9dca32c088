#![no_main]

use libfuzzer_sys::fuzz_target;
use rehearsal::harness::{ConfigFile, ExperimentConfig};

fuzz_target!(|text: &str| {
    let Ok(file) = ConfigFile::parse(text) else {
        return;
    };
    let rendered = file.render();
    let again = ConfigFile::parse(&rendered).expect("rendered config parses");
    assert_eq!(again.render(), rendered);
    if let Ok(config) = ExperimentConfig::from_file(&file) {
        let back = ExperimentConfig::from_file(&config.to_file()).expect("defaults file is valid");
        assert_eq!(back.to_file().render(), config.to_file().render());
    }
});
