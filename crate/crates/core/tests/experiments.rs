use std::collections::BTreeSet;

use conceptblend::experiments::{
    appendix_grid, batch_tiles, compose_grid, execute, ratio_sweep_preset, run_batch, seed_dependency_preset,
    symmetry_preset, unet_split_sweep, BatchManifest, Category, ConceptPair, Registry, RunStatus, DEFAULT_RATIOS,
    DEFAULT_SEEDS,
};
use conceptblend::pipeline::{BlendMethod, GenerationManifest};
use conceptblend::{Error, ToyBackend};

fn lion_cat() -> ConceptPair {
    Registry::bundled().get("lion-cat").unwrap().clone()
}

#[test]
fn one_pair_batch_has_forty_runs_and_reruns_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let toy = ToyBackend::new();
    let pairs = [lion_cat()];
    let first = run_batch(&toy, &pairs, &BlendMethod::BLENDS, &DEFAULT_SEEDS, dir.path()).unwrap();
    assert_eq!(first.runs.len(), 40);
    assert_eq!(first.count(RunStatus::Generated), 40);
    assert!(dir.path().join("lion-cat/unet/7/manifest.json").is_file());
    assert!(dir.path().join("lion-cat/switch/0/image.png").is_file());

    let again = run_batch(&toy, &pairs, &BlendMethod::BLENDS, &DEFAULT_SEEDS, dir.path()).unwrap();
    assert_eq!(again.count(RunStatus::Generated), 0);
    let hashes = |b: &BatchManifest| b.runs.iter().map(|r| r.hash.clone()).collect::<Vec<_>>();
    assert_eq!(hashes(&first), hashes(&again));
    assert_eq!(BatchManifest::read(dir.path()).unwrap(), again);
}

#[test]
fn stale_manifest_is_regenerated() {
    let dir = tempfile::tempdir().unwrap();
    let toy = ToyBackend::new();
    let pairs = [lion_cat()];
    run_batch(&toy, &pairs, &[BlendMethod::Switch], &[0], dir.path()).unwrap();
    let path = dir.path().join("lion-cat/switch/0/manifest.json");
    let mut m = GenerationManifest::read(&path).unwrap();
    m.config.guidance = 3.0;
    m.write(&path).unwrap();
    let again = run_batch(&toy, &pairs, &[BlendMethod::Switch], &[0], dir.path()).unwrap();
    assert_eq!(again.count(RunStatus::Generated), 1);
    assert_eq!(GenerationManifest::read(&path).unwrap().config.guidance, 7.5);
}

#[test]
fn failing_run_does_not_abort_the_batch() {
    let dir = tempfile::tempdir().unwrap();
    let toy = ToyBackend::new();
    let long = "a very long prompt that has far more words than the toy text encoder can hold at once";
    let pairs = [
        ConceptPair::new(long, "cat", Category::Different).unwrap(),
        lion_cat(),
    ];
    let batch = run_batch(&toy, &pairs, &[BlendMethod::Textual], &[0, 1], dir.path()).unwrap();
    assert_eq!(batch.count(RunStatus::Failed), 2);
    assert_eq!(batch.count(RunStatus::Generated), 2);
    assert!(batch.failures().all(|r| r.error.as_deref().unwrap().contains("token")));
}

#[test]
fn shared_noise_regime_shares_the_initial_latent() {
    let dir = tempfile::tempdir().unwrap();
    let batch = execute(&ToyBackend::new(), &seed_dependency_preset(&lion_cat(), 0), dir.path()).unwrap();
    let init_hashes = |prefix: &str| -> BTreeSet<String> {
        batch
            .runs
            .iter()
            .filter(|r| r.variant.starts_with(prefix))
            .map(|r| r.init_latent_hash.clone().unwrap())
            .collect()
    };
    assert_eq!(init_hashes("a_").len(), 1);
    assert_eq!(init_hashes("b_").len(), 2);
    assert_eq!(init_hashes("c_").len(), 3);
}

#[test]
fn ratio_sweep_echoes_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let batch = execute(&ToyBackend::new(), &ratio_sweep_preset(&lion_cat(), &DEFAULT_RATIOS, 0), dir.path()).unwrap();
    assert_eq!(batch.runs.len(), 12);
    let ratios: BTreeSet<String> = batch
        .runs
        .iter()
        .map(|r| GenerationManifest::read(&dir.path().join(&r.manifest)).unwrap().config.ratio.to_string())
        .collect();
    assert_eq!(ratios, ["0.25", "0.5", "0.75"].map(String::from).into());
}

#[test]
fn split_sweep_manifests_carry_labels() {
    let dir = tempfile::tempdir().unwrap();
    let batch = execute(&ToyBackend::new(), &unet_split_sweep(&lion_cat(), 0), dir.path()).unwrap();
    let labels: Vec<String> = batch
        .runs
        .iter()
        .map(|r| GenerationManifest::read(&dir.path().join(&r.manifest)).unwrap().split.unwrap())
        .collect();
    assert_eq!(labels, ["1-6", "2-5", "3-4", "4-3", "5-2", "6-1"]);
}

#[test]
fn symmetry_grid_has_eight_tiles_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let batch = execute(&ToyBackend::new(), &symmetry_preset(&lion_cat(), &[0]), dir.path()).unwrap();
    let tiles = batch_tiles(&batch, dir.path());
    let out = dir.path().join("grids/symmetry.png");
    let layout = compose_grid(&tiles, 4, 2, &[], &["forward".into(), "reversed".into()], &out).unwrap();
    assert_eq!(layout.cells.len(), 8);
    assert_eq!(layout.cells[0].label, "lion-cat/textual/0");
    assert_eq!(layout.cells[1].label, "lion-cat/textual_reversed/0");
    assert_eq!(layout.cells[7].label, "lion-cat/unet_reversed/0");
    let img = image::open(&out).unwrap();
    assert_eq!(img.width(), 2 * 64 + 3 * layout.gutter);
    assert!(out.with_extension("json").is_file());

    // deterministic bytes
    let again = dir.path().join("grids/symmetry2.png");
    compose_grid(&tiles, 4, 2, &[], &[], &again).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn appendix_grid_rows_are_methods() {
    let dir = tempfile::tempdir().unwrap();
    let batch = run_batch(&ToyBackend::new(), &[lion_cat()], &BlendMethod::BLENDS, &DEFAULT_SEEDS, dir.path()).unwrap();
    let layout = appendix_grid(&batch, dir.path(), "lion-cat", &dir.path().join("appendix.png")).unwrap();
    assert_eq!((layout.rows, layout.cols), (4, 10));
    assert_eq!(layout.row_labels, ["TEXTUAL", "SWITCH", "ALTERNATE", "UNET"]);
    assert_eq!(layout.cells[10].label, "SWITCH seed 0");

    std::fs::remove_file(dir.path().join("lion-cat/unet/3/image.png")).unwrap();
    match appendix_grid(&batch, dir.path(), "lion-cat", &dir.path().join("x.png")) {
        Err(Error::MissingImages(m)) => assert!(m.iter().any(|s| s.contains("UNET seed 3"))),
        other => panic!("{other:?}"),
    }
}
