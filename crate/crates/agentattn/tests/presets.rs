use agentattn::presets::{load_preset, preset_dir};
use agentattn_core::flops::flops_model_forward;
use agentattn_core::ParamReport;

fn total(name: &str) -> f64 {
    let p = load_preset(preset_dir().join(format!("{name}.json"))).unwrap();
    ParamReport::for_preset(&p).unwrap().total as f64
}

fn within(value: f64, target: f64, frac: f64) -> bool {
    (value - target).abs() <= frac * target
}

#[test]
fn shipped_deit_counts_track_reference_sizes() {
    assert!(within(total("agent-deit-t"), 6.0e6, 0.03));
    assert!(within(total("agent-deit-b"), 87.2e6, 0.03));
    let s = total("agent-deit-s");
    assert!(within(s, 23.1e6, 0.03), "{s}");
    assert!(within(s, 22.7e6, 0.03), "{s}");
}

#[test]
fn exact_totals_are_frozen() {
    assert_eq!(total("agent-deit-t") as u64, 5_971_792);
    assert_eq!(total("agent-deit-s") as u64, 22_559_416);
    assert_eq!(total("agent-deit-b") as u64, 87_041_992);
}

#[test]
fn deit_tiny_macs() {
    let p = load_preset(preset_dir().join("agent-deit-t.json")).unwrap();
    let f = flops_model_forward(&p).unwrap();
    assert_eq!(f.macs, 1_162_117_632);
    assert!(within(f.macs as f64, 1.2e9, 0.10));
}

#[test]
fn every_shipped_file_parses_or_is_declared_only() {
    let mut seen = 0;
    for entry in std::fs::read_dir(preset_dir()).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        match load_preset(&path) {
            Ok(p) => assert_eq!(p.architecture, "deit"),
            Err(e) => {
                assert_ne!(v["architecture"], "deit", "{}: {e}", path.display());
                assert!(v["stages"].as_array().is_some_and(|s| !s.is_empty()));
            }
        }
        seen += 1;
    }
    assert_eq!(seen, 6);
}
