use pcp_core::config::InputMode;
use pcp_core::data::{load_dataset, ImageStore};
use pcp_core::synth::*;

fn cfg(rule: LabelRule, n: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n_tracks: n,
        seed,
        label_rule: rule,
        ..Default::default()
    }
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        out.push((entry.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn same_seed_writes_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let c = cfg(LabelRule::Joint, 12, 5);
    generate(&c).unwrap().write(&a.path().join("d.jsonl")).unwrap();
    generate(&c).unwrap().write(&b.path().join("d.jsonl")).unwrap();
    let (fa, fb) = (dir_bytes(a.path()), dir_bytes(b.path()));
    assert_eq!(fa.len(), 1 + 2 * 12);
    assert_eq!(fa, fb);
    let other = generate(&cfg(LabelRule::Joint, 12, 6)).unwrap();
    assert_ne!(other.tracks, generate(&c).unwrap().tracks);
}

#[test]
fn written_dataset_reloads_and_validates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    let ds = generate(&cfg(LabelRule::MapDependent, 10, 1)).unwrap();
    ds.write(&path).unwrap();
    let tracks = load_dataset(&path, InputMode::ThreeD).unwrap();
    assert_eq!(tracks, ds.tracks);
    let mut disk = ImageStore::new(dir.path());
    let mut memory = ds.image_store(dir.path());
    for t in &tracks {
        for f in [&t.frames[0], t.frames.last().unwrap()] {
            for r in [f.map_raster.as_ref().unwrap(), f.scene_image.as_ref().unwrap()] {
                assert_eq!(disk.load(r).unwrap(), memory.load(r).unwrap());
            }
        }
    }
}

#[test]
fn balance_stays_within_bounds() {
    for rule in LabelRule::ALL {
        for seed in 0..4 {
            let ds = generate(&cfg(rule, 200, seed)).unwrap();
            let frac = ds.positive_fraction();
            assert!((0.4..=0.6).contains(&frac), "{rule} seed {seed}: {frac}");
            assert_eq!(ds.tracks.len(), 200);
        }
    }
}

#[test]
fn infeasible_balance_is_rejected() {
    let c = ScenarioConfig {
        positive_fraction: 0.9,
        ..cfg(LabelRule::Joint, 50, 0)
    };
    assert!(generate(&c).is_err());
    let c = ScenarioConfig {
        balance: (0.7, 0.6),
        ..cfg(LabelRule::Joint, 50, 0)
    };
    assert!(c.validate().is_err());
    let c = ScenarioConfig {
        noise_level: 0.5,
        ..cfg(LabelRule::Joint, 50, 0)
    };
    assert!(c.validate().is_err());
    let c = ScenarioConfig {
        camera: (16, 16),
        ..cfg(LabelRule::Joint, 50, 0)
    };
    assert!(generate(&c).is_err());
}

/// Clean labels follow from emitted coordinates and rendered maps alone.
#[test]
fn rule_is_recoverable_from_the_outputs() {
    for rule in LabelRule::ALL {
        let ds = generate(&ScenarioConfig {
            noise_level: 0.0,
            ..cfg(rule, 150, 3)
        })
        .unwrap();
        let mut store = ds.image_store("/");
        for (t, a) in ds.tracks.iter().zip(&ds.attributes) {
            let toward = toward_speed(t).unwrap() > TOWARD_SPEED;
            assert_eq!(toward, a.toward, "{}", t.track_id);
            let map = store.load(t.frames[PROBE_FRAME].map_raster.as_ref().unwrap()).unwrap();
            let near = probe_crosswalk_near(&map, ds.config.world_extent).unwrap();
            assert_eq!(near, a.crosswalk_near, "{}", t.track_id);
            let clean = rule.label(a);
            assert_eq!(t.label.as_u8() == 1, clean);
            assert_eq!(t.crossing_frame.is_some(), clean);
        }
    }
}

#[test]
fn label_noise_flips_about_the_requested_share() {
    let ds = generate(&ScenarioConfig {
        noise_level: 0.1,
        ..cfg(LabelRule::PedMotionOnly, 1000, 4)
    })
    .unwrap();
    let flipped = ds
        .tracks
        .iter()
        .zip(&ds.attributes)
        .filter(|(t, a)| (t.label.as_u8() == 1) != a.toward)
        .count();
    assert!((60..=140).contains(&flipped), "{flipped}");
}

#[test]
fn rule_names_parse() {
    for rule in LabelRule::ALL {
        assert_eq!(rule.as_str().parse::<LabelRule>().unwrap(), rule);
    }
    assert!("sometimes".parse::<LabelRule>().is_err());
}
