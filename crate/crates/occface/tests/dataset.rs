use std::fs;
use std::path::Path;

use occface::config::GridConfig;
use occface::formats::{load_mask, load_point_cloud, save_point_cloud};
use occface::manifest::*;
use occface_core::recognition::OcclusionKind;
use occface_core::synth::SynthParams;
use occface_core::{apply_transform, PointCloud, Vec3};
use tempfile::tempdir;

fn small() -> SynthParams {
    SynthParams {
        width: 20,
        height: 20,
        pixel_spacing: 1.0 / 19.0,
        ..SynthParams::default()
    }
}

fn count_files(dir: &Path, ext: &str) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
        .count()
}

#[test]
fn two_subjects_one_occlusion_gives_four_scans() {
    let dir = tempdir().unwrap();
    let m = write_synthetic_dataset(dir.path(), &small(), 2, 1, 0).unwrap();
    assert!(m.ends_with("manifest.json"));
    assert_eq!(count_files(&dir.path().join("scans"), "xyz"), 4);
    let manifest = Manifest::load(&m).unwrap();
    assert_eq!(manifest.scans.len(), 4);
    assert_eq!(count_files(&dir.path().join("truth"), "pgm"), 2);
}

#[test]
fn desk_scale_counts() {
    let dir = tempdir().unwrap();
    let m = write_synthetic_dataset(dir.path(), &small(), 10, 4, 0).unwrap();
    let manifest = Manifest::load(&m).unwrap();
    assert_eq!(manifest.scans.len(), 50);
    assert_eq!(manifest.scans.iter().filter(|s| s.kind != OcclusionKind::None).count(), 40);
    for kind in [OcclusionKind::Eye, OcclusionKind::Mouth, OcclusionKind::Glasses, OcclusionKind::Hair] {
        assert_eq!(manifest.scans.iter().filter(|s| s.kind == kind).count(), 10);
    }
}

#[test]
fn same_seed_gives_byte_identical_manifest() {
    let (a, b, c) = (tempdir().unwrap(), tempdir().unwrap(), tempdir().unwrap());
    let ma = write_synthetic_dataset(a.path(), &small(), 3, 2, 9).unwrap();
    let mb = write_synthetic_dataset(b.path(), &small(), 3, 2, 9).unwrap();
    let mc = write_synthetic_dataset(c.path(), &small(), 3, 2, 10).unwrap();
    assert_eq!(fs::read(&ma).unwrap(), fs::read(&mb).unwrap());
    assert_ne!(fs::read(&ma).unwrap(), fs::read(&mc).unwrap());
    let probe = |d: &Path| fs::read(d.join("scans/s002_2_mouth.xyz")).unwrap();
    assert_eq!(probe(a.path()), probe(b.path()));
}

#[test]
fn fewer_than_two_subjects_is_rejected() {
    let dir = tempdir().unwrap();
    let err = write_synthetic_dataset(dir.path(), &small(), 1, 4, 0).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn ground_truth_scores_without_regeneration() {
    let params = SynthParams {
        noise_sigma: 0.0,
        ..small()
    };
    let dir = tempdir().unwrap();
    let m = write_synthetic_dataset(dir.path(), &params, 2, 4, 4).unwrap();
    let manifest = Manifest::load(&m).unwrap();
    assert_eq!(manifest.grid.width, 20);
    for scan in &manifest.scans {
        let truth = scan.truth.as_ref().unwrap();
        let probe = load_point_cloud(&resolve(&m, &scan.probe)).unwrap();
        let frontal = apply_transform(&probe, &truth.registration).unwrap();
        for (i, p) in frontal.points.iter().enumerate() {
            let (r, c) = (i / 20, i % 20);
            assert!((p.x - c as f64 / 19.0).abs() < 1e-9 && (p.y - r as f64 / 19.0).abs() < 1e-9);
        }
        match (&truth.mask, scan.kind) {
            (None, OcclusionKind::None) => {}
            (Some(rel), k) if k != OcclusionKind::None => {
                let mask = load_mask(&resolve(&m, rel)).unwrap();
                assert_eq!(mask.dims(), (20, 20));
                assert!(mask.occluded_count() > 0);
            }
            other => panic!("unexpected truth {other:?}"),
        }
    }
}

#[test]
fn bosphorus_names() {
    assert_eq!(parse_bosphorus_name("bs012_O_EYE_0"), Some((12, OcclusionKind::Eye)));
    assert_eq!(parse_bosphorus_name("bs000_O_MOUTH_0"), Some((0, OcclusionKind::Mouth)));
    assert_eq!(parse_bosphorus_name("bs104_O_GLASSES_0"), Some((104, OcclusionKind::Glasses)));
    assert_eq!(parse_bosphorus_name("bs007_O_HAIR_0"), Some((7, OcclusionKind::Hair)));
    assert_eq!(parse_bosphorus_name("bs007_N_N_1"), Some((7, OcclusionKind::None)));
    assert_eq!(parse_bosphorus_name("bs007_E_HAPPY_0"), None);
    assert_eq!(parse_bosphorus_name("bs007_O_HAT_0"), None);
    assert_eq!(parse_bosphorus_name("scan_01"), None);
}

#[test]
fn index_a_bosphorus_directory() {
    let dir = tempdir().unwrap();
    let scans = dir.path().join("raw");
    let cloud = PointCloud::new(vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 1.0)]);
    for name in ["bs002_O_EYE_0", "bs001_N_N_0", "bs001_O_HAIR_0", "bs001_E_ANGER_0"] {
        save_point_cloud(&scans.join(format!("{name}.xyz")), &cloud).unwrap();
    }
    fs::write(scans.join("notes.txt"), "x").unwrap();
    let m = index_scan_directory(&scans, dir.path(), "template.xyz", GridConfig::default()).unwrap();
    let ids: Vec<_> = m.scans.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["bs001_N_N_0", "bs001_O_HAIR_0", "bs002_O_EYE_0"]);
    assert_eq!(m.scans[0].probe, "raw/bs001_N_N_0.xyz");
    assert!(m.scans.iter().all(|s| s.truth.is_none()));
    assert!(m.synthetic.is_none());

    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert!(index_scan_directory(&empty, dir.path(), "t.xyz", GridConfig::default()).is_err());
}

#[test]
fn manifest_round_trip_and_version_check() {
    let dir = tempdir().unwrap();
    let m = write_synthetic_dataset(dir.path(), &small(), 2, 1, 0).unwrap();
    let manifest = Manifest::load(&m).unwrap();
    let copy = dir.path().join("copy.json");
    manifest.save(&copy).unwrap();
    assert_eq!(Manifest::load(&copy).unwrap(), manifest);

    let text = fs::read_to_string(&m).unwrap().replace("\"version\": 1", "\"version\": 7");
    fs::write(&copy, text).unwrap();
    assert_eq!(Manifest::load(&copy).unwrap_err().exit_code(), 2);
}
