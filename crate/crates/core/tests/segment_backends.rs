use wsitile::raster::Plane;
use wsitile::segment::{mask_path, LabelMask, SegBackendConfig, Segmenter};
use wsitile::synth::{gen_slide, Blob, SynthSpec};
use wsitile::{run_pipeline, Error, PipelineConfig, RasterRgb};

fn maskdir(dir: &std::path::Path) -> Segmenter {
    Segmenter::from_config(&SegBackendConfig::Maskdir { dir: dir.to_path_buf() }).unwrap()
}

#[test]
fn maskdir_errors_are_backend_failures() {
    let dir = tempfile::tempdir().unwrap();
    let seg = maskdir(dir.path());
    let tile = RasterRgb::filled(8, 6, [200, 150, 200]);

    let e = seg.segment(&tile, 1234).unwrap_err();
    assert!(matches!(&e, Error::MaskMissing { tile_id: 1234, .. }), "{e}");
    assert!(e.to_string().contains("1234"));
    assert_eq!(e.exit_code(), 4);

    LabelMask::from_plane(Plane::filled(6, 8, 1)).unwrap().save_png(&mask_path(dir.path(), 11)).unwrap();
    let e = seg.segment(&tile, 11).unwrap_err();
    assert!(matches!(e, Error::MaskShapeMismatch(_)), "{e}");

    Plane::filled(8, 6, 7).save_png(&mask_path(dir.path(), 12)).unwrap();
    let e = seg.segment(&tile, 12).unwrap_err();
    assert!(matches!(&e, Error::MaskShapeMismatch(m) if m.contains("12.png")), "{e}");
    assert_eq!(e.exit_code(), 4);

    let mut p = Plane::filled(8, 6, 1);
    p.set(3, 3, 0);
    LabelMask::from_plane(p).unwrap().save_png(&mask_path(dir.path(), 13)).unwrap();
    // A one-pixel hole inside tissue is closed after loading.
    let m = seg.segment(&tile, 13).unwrap();
    assert_eq!(m.get(3, 3), 1);
    assert_eq!(seg.segment_raw(&tile, 13).unwrap().get(3, 3), 0);
}

fn slide_with(dir: &std::path::Path, blobs: Vec<Blob>) -> std::path::PathBuf {
    let spec = SynthSpec {
        width: 300,
        height: 200,
        seed: 3,
        blobs,
        random_blobs: None,
        folds: vec![],
        blur_patches: vec![],
        pen_strokes: vec![],
        texture_scale: 24,
    };
    gen_slide(&spec).unwrap().write(dir).unwrap();
    dir.join("slide.png")
}

#[test]
fn blank_slide_reports_no_tissue() {
    let dir = tempfile::tempdir().unwrap();
    let slide = slide_with(dir.path(), vec![]);
    let e = run_pipeline(&slide, &PipelineConfig::default(), &dir.path().join("out")).unwrap_err();
    assert!(matches!(e.root(), Error::NoTissueFound), "{e}");
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn pipeline_stops_on_the_first_missing_mask() {
    let dir = tempfile::tempdir().unwrap();
    let slide = slide_with(dir.path(), vec![Blob::Rect { x: 20, y: 20, w: 260, h: 160 }]);
    let cfg = PipelineConfig {
        tile_w: 64,
        tile_h: 64,
        segmentation: SegBackendConfig::Maskdir { dir: dir.path().join("masks") },
        ..PipelineConfig::default()
    };
    let e = run_pipeline(&slide, &cfg, &dir.path().join("out")).unwrap_err();
    assert!(matches!(e.root(), Error::MaskMissing { .. }), "{e}");
    assert_eq!(e.exit_code(), 4);
}

#[test]
fn missing_and_garbage_slides_are_distinguished() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig::default();
    let e = run_pipeline(&dir.path().join("nope.png"), &cfg, dir.path()).unwrap_err();
    assert_eq!(e.exit_code(), 5, "{e}");
    let junk = dir.path().join("junk.tif");
    std::fs::write(&junk, b"II*\0garbage").unwrap();
    let e = run_pipeline(&junk, &cfg, dir.path()).unwrap_err();
    assert!(matches!(e.exit_code(), 5 | 6), "{e}");
}

#[test]
fn failed_cleaning_keeps_the_tile_with_a_warning() {
    use wsitile::penmark::CleaningBackend;
    let dir = tempfile::tempdir().unwrap();
    let slide = slide_with(dir.path(), vec![Blob::Rect { x: 20, y: 20, w: 260, h: 160 }]);
    let cfg = PipelineConfig {
        tile_w: 128,
        tile_h: 128,
        cleaning: CleaningBackend::Sidecar { command: "exit 1".into(), timeout_secs: 2.0, processes: 1 },
        ..PipelineConfig::default()
    };
    let run = run_pipeline(&slide, &cfg, &dir.path().join("out")).unwrap();
    let members: Vec<_> = run.records.iter().flat_map(|r| &r.members).collect();
    assert!(!members.is_empty());
    for m in members {
        assert!(!m.cleaned);
        assert!(m.warning.as_deref().is_some_and(|w| w.contains("sidecar")), "{:?}", m.warning);
    }
    assert!(run.records.iter().any(|r| r.chosen.is_some()));
}
