//! Concept-pair registry, experiment presets, the batch runner and grid
//! composition.
//!
//! A batch writes one directory per run,
//! `<batch>/<pair>/<method>/<seed>/{manifest.json,image.png}`, plus a
//! `batch.json` summary at the root. Re-running a batch over the same
//! directory only generates runs whose manifest is missing or stale.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::DiffusionBackend;
use crate::error::{Error, Result};
use crate::pipeline::{generate, BlendConfig, BlendMethod, GenerationManifest};
use crate::unet_routing::make_block_split;

/// The pinned seed pool used for every study batch.
pub const DEFAULT_SEEDS: [u64; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];
pub const DEFAULT_RATIOS: [f64; 3] = [0.25, 0.5, 0.75];

/// Offsets applied to the base seed in the seed-dependency regimes that
/// need distinct noise.
pub const SECOND_PROMPT_SEED_OFFSET: u64 = 1000;
pub const BLEND_SEED_OFFSET: u64 = 2000;

const BUNDLED_REGISTRY: &str = include_str!("../data/pairs.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    Same,
    Different,
    Compound,
    Style,
    Architecture,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Same,
        Category::Different,
        Category::Compound,
        Category::Style,
        Category::Architecture,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Same => "SAME",
            Category::Different => "DIFFERENT",
            Category::Compound => "COMPOUND",
            Category::Style => "STYLE",
            Category::Architecture => "ARCHITECTURE",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Parse(format!("unknown category {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptPair {
    pub id: String,
    pub prompt_1: String,
    pub prompt_2: String,
    pub category: Category,
}

impl ConceptPair {
    pub fn new(prompt_1: &str, prompt_2: &str, category: Category) -> Result<Self> {
        let id = format!("{}-{}", slug(prompt_1), slug(prompt_2));
        Self::with_id(id, prompt_1, prompt_2, category)
    }

    pub fn with_id(id: impl Into<String>, prompt_1: &str, prompt_2: &str, category: Category) -> Result<Self> {
        let id = id.into();
        if prompt_1.trim().is_empty() || prompt_2.trim().is_empty() {
            return Err(Error::InvalidConfig(format!("pair {id:?} has an empty prompt")));
        }
        if id.is_empty() || id.contains(['/', '\\', ',']) || id.starts_with('.') {
            return Err(Error::InvalidConfig(format!("pair id {id:?} is not a valid path component")));
        }
        Ok(Self {
            id,
            prompt_1: prompt_1.to_string(),
            prompt_2: prompt_2.to_string(),
            category,
        })
    }

    /// Blend configuration for this pair at the study defaults.
    pub fn config(&self, method: BlendMethod, seed: u64) -> BlendConfig {
        BlendConfig::new(method, self.prompt_1.clone(), self.prompt_2.clone()).with_seed(seed)
    }
}

/// Lower-case, alphanumeric runs joined by `_`.
pub fn slug(text: &str) -> String {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_ascii_lowercase())
        .collect::<Vec<_>>()
        .join("_")
}

#[derive(Deserialize)]
struct RegistryFile {
    pair: Vec<RegistryEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryEntry {
    id: Option<String>,
    category: Category,
    prompt_1: String,
    prompt_2: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    pairs: Vec<ConceptPair>,
}

impl Registry {
    /// The registry compiled into the library.
    pub fn bundled() -> Self {
        Self::from_toml_str(BUNDLED_REGISTRY).expect("bundled registry is valid")
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: RegistryFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut pairs = Vec::with_capacity(file.pair.len());
        let mut seen_ids = BTreeSet::new();
        let mut seen_prompts = BTreeSet::new();
        for e in file.pair {
            let pair = match e.id {
                Some(id) => ConceptPair::with_id(id, &e.prompt_1, &e.prompt_2, e.category)?,
                None => ConceptPair::new(&e.prompt_1, &e.prompt_2, e.category)?,
            };
            if !seen_ids.insert(pair.id.clone()) {
                return Err(Error::InvalidConfig(format!("duplicate pair id {:?}", pair.id)));
            }
            if !seen_prompts.insert((pair.prompt_1.clone(), pair.prompt_2.clone())) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate pair {:?} / {:?}",
                    pair.prompt_1, pair.prompt_2
                )));
            }
            pairs.push(pair);
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[ConceptPair] {
        &self.pairs
    }

    pub fn in_category(&self, category: Category) -> Vec<ConceptPair> {
        self.pairs.iter().filter(|p| p.category == category).cloned().collect()
    }

    pub fn get(&self, id: &str) -> Option<&ConceptPair> {
        self.pairs.iter().find(|p| p.id == id)
    }

    pub fn category_of(&self, id: &str) -> Option<Category> {
        self.get(id).map(|p| p.category)
    }
}

/// Pairs from the bundled registry, optionally restricted to a category
/// given by name (`"compound"`, `"STYLE"`, ...).
pub fn load_pairs(category: Option<&str>) -> Result<Vec<ConceptPair>> {
    let registry = Registry::bundled();
    match category {
        None => Ok(registry.pairs().to_vec()),
        Some(name) => Ok(registry.in_category(name.parse()?)),
    }
}

/// One planned generation and where it lands in the batch tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub pair: String,
    /// Method directory name; presets append a variant (`switch_r0.25`).
    pub variant: String,
    pub config: BlendConfig,
}

impl RunSpec {
    pub fn new(pair: impl Into<String>, variant: impl Into<String>, config: BlendConfig) -> Self {
        Self {
            pair: pair.into(),
            variant: variant.into(),
            config,
        }
    }

    /// `<pair>/<variant>/<seed>`, relative to the batch root.
    pub fn rel_dir(&self) -> PathBuf {
        Path::new(&self.pair)
            .join(&self.variant)
            .join(self.config.seed.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub runs: Vec<RunSpec>,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }
}

/// The Cartesian product pairs x methods x seeds at default settings.
pub fn plan_batch(pairs: &[ConceptPair], methods: &[BlendMethod], seeds: &[u64]) -> BatchPlan {
    let mut runs = Vec::with_capacity(pairs.len() * methods.len() * seeds.len());
    for pair in pairs {
        for &method in methods {
            for &seed in seeds {
                let config = match method {
                    BlendMethod::Baseline => BlendConfig::baseline(pair.prompt_1.clone(), seed),
                    _ => pair.config(method, seed),
                };
                runs.push(RunSpec::new(pair.id.clone(), method.slug(), config));
            }
        }
    }
    BatchPlan { runs }
}

/// Each blend method in both prompt orders.
pub fn symmetry_preset(pair: &ConceptPair, seeds: &[u64]) -> BatchPlan {
    let mut runs = Vec::new();
    for method in BlendMethod::BLENDS {
        for &seed in seeds {
            let forward = pair.config(method, seed);
            let reversed = forward.reversed();
            runs.push(RunSpec::new(pair.id.clone(), method.slug(), forward));
            runs.push(RunSpec::new(pair.id.clone(), format!("{}_reversed", method.slug()), reversed));
        }
    }
    BatchPlan { runs }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SeedRegime {
    /// Every image starts from the same noise.
    SharedNoise,
    /// The two single-prompt images use different noise; the blends reuse the
    /// first prompt's noise.
    BlendSharesFirst,
    /// All three sources of noise differ.
    AllDistinct,
}

impl SeedRegime {
    pub const ALL: [SeedRegime; 3] = [
        SeedRegime::SharedNoise,
        SeedRegime::BlendSharesFirst,
        SeedRegime::AllDistinct,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            SeedRegime::SharedNoise => "a",
            SeedRegime::BlendSharesFirst => "b",
            SeedRegime::AllDistinct => "c",
        }
    }

    /// Seeds for (first prompt, second prompt, blend).
    pub fn seeds(self, base: u64) -> (u64, u64, u64) {
        let second = base.wrapping_add(SECOND_PROMPT_SEED_OFFSET);
        match self {
            SeedRegime::SharedNoise => (base, base, base),
            SeedRegime::BlendSharesFirst => (base, second, base),
            SeedRegime::AllDistinct => (base, second, base.wrapping_add(BLEND_SEED_OFFSET)),
        }
    }
}

/// For each regime: both single-prompt baselines and the four blends.
pub fn seed_dependency_preset(pair: &ConceptPair, base_seed: u64) -> BatchPlan {
    let mut runs = Vec::new();
    for regime in SeedRegime::ALL {
        let (s1, s2, sb) = regime.seeds(base_seed);
        let tag = regime.tag();
        runs.push(RunSpec::new(
            pair.id.clone(),
            format!("{tag}_prompt_1"),
            BlendConfig::baseline(pair.prompt_1.clone(), s1),
        ));
        runs.push(RunSpec::new(
            pair.id.clone(),
            format!("{tag}_prompt_2"),
            BlendConfig::baseline(pair.prompt_2.clone(), s2),
        ));
        for method in BlendMethod::BLENDS {
            runs.push(RunSpec::new(
                pair.id.clone(),
                format!("{tag}_{}", method.slug()),
                pair.config(method, sb),
            ));
        }
    }
    BatchPlan { runs }
}

/// Every blend method at each ratio.
pub fn ratio_sweep_preset(pair: &ConceptPair, ratios: &[f64], seed: u64) -> BatchPlan {
    let mut runs = Vec::new();
    for &ratio in ratios {
        for method in BlendMethod::BLENDS {
            runs.push(RunSpec::new(
                pair.id.clone(),
                format!("{}_r{ratio}", method.slug()),
                pair.config(method, seed).with_ratio(ratio),
            ));
        }
    }
    BatchPlan { runs }
}

/// UNET with each split from `1-6` through `6-1`.
pub fn unet_split_sweep(pair: &ConceptPair, seed: u64) -> BatchPlan {
    let runs = (1..=6usize)
        .map(|n| {
            let split = make_block_split(n).expect("1..=6 is a valid split");
            RunSpec::new(
                pair.id.clone(),
                format!("unet_{}", split.label()),
                pair.config(BlendMethod::Unet, seed).with_split(split),
            )
        })
        .collect();
    BatchPlan { runs }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Generated,
    /// A matching manifest was already on disk.
    Reused,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub pair: String,
    pub variant: String,
    pub method: BlendMethod,
    pub seed: u64,
    /// Manifest path relative to the batch root.
    pub manifest: PathBuf,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_latent_hash: Option<String>,
    /// Denoising steps recorded for the run.
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn image(&self) -> PathBuf {
        self.manifest.with_file_name("image.png")
    }

    pub fn is_ok(&self) -> bool {
        self.status != RunStatus::Failed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchManifest {
    pub pairs: Vec<String>,
    pub methods: Vec<BlendMethod>,
    pub seeds: Vec<u64>,
    pub backend: String,
    pub layout: String,
    pub runs: Vec<RunRecord>,
}

impl BatchManifest {
    pub const FILE_NAME: &'static str = "batch.json";

    pub fn read(batch_dir: &Path) -> Result<Self> {
        let path = batch_dir.join(Self::FILE_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, batch_dir: &Path) -> Result<()> {
        let path = batch_dir.join(Self::FILE_NAME);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn count(&self, status: RunStatus) -> usize {
        self.runs.iter().filter(|r| r.status == status).count()
    }

    pub fn failures(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(|r| r.status == RunStatus::Failed)
    }

    pub fn find(&self, pair: &str, variant: &str, seed: u64) -> Option<&RunRecord> {
        self.runs
            .iter()
            .find(|r| r.pair == pair && r.variant == variant && r.seed == seed)
    }
}

/// Run every spec in `plan` under `out_dir`, in parallel over clones of
/// `backend`. Failures are recorded per run; the batch itself only fails on
/// I/O errors writing `batch.json`.
pub fn execute<B>(backend: &B, plan: &BatchPlan, out_dir: &Path) -> Result<BatchManifest>
where
    B: DiffusionBackend + Clone + Send + Sync,
{
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let runs: Vec<RunRecord> = plan
        .runs
        .par_iter()
        .map_with(backend.clone(), |b, spec| run_one(b, spec, out_dir))
        .collect();

    let mut pairs = Vec::new();
    let mut methods = BTreeSet::new();
    let mut seeds = BTreeSet::new();
    for spec in &plan.runs {
        if !pairs.contains(&spec.pair) {
            pairs.push(spec.pair.clone());
        }
        methods.insert(spec.config.method);
        seeds.insert(spec.config.seed);
    }
    let manifest = BatchManifest {
        pairs,
        methods: methods.into_iter().collect(),
        seeds: seeds.into_iter().collect(),
        backend: backend.descriptor().name.clone(),
        layout: "<pair>/<method>/<seed>/{manifest.json,image.png}".into(),
        runs,
    };
    manifest.write(out_dir)?;
    let failed = manifest.count(RunStatus::Failed);
    if failed > 0 {
        log::warn!("{failed} of {} runs failed", manifest.runs.len());
    }
    Ok(manifest)
}

/// The study batch: pairs x methods x seeds at default settings.
pub fn run_batch<B>(
    backend: &B,
    pairs: &[ConceptPair],
    methods: &[BlendMethod],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<BatchManifest>
where
    B: DiffusionBackend + Clone + Send + Sync,
{
    execute(backend, &plan_batch(pairs, methods, seeds), out_dir)
}

fn run_one<B: DiffusionBackend>(backend: &mut B, spec: &RunSpec, out_dir: &Path) -> RunRecord {
    let rel = spec.rel_dir();
    let dir = out_dir.join(&rel);
    let mut record = RunRecord {
        pair: spec.pair.clone(),
        variant: spec.variant.clone(),
        method: spec.config.method,
        seed: spec.config.seed,
        manifest: rel.join("manifest.json"),
        status: RunStatus::Failed,
        hash: None,
        init_latent_hash: None,
        steps: 0,
        error: None,
    };

    if let Some(existing) = reusable(&dir, spec, backend) {
        record.status = RunStatus::Reused;
        record.steps = existing.config.steps;
        record.hash = Some(existing.hash);
        record.init_latent_hash = Some(existing.init_latent_hash);
        return record;
    }

    match generate(backend, &spec.config).and_then(|r| r.write_artifacts(&dir).map(|_| r)) {
        Ok(result) => {
            record.status = RunStatus::Generated;
            record.steps = result.trace.len();
            record.hash = Some(result.manifest.hash);
            record.init_latent_hash = Some(result.manifest.init_latent_hash);
        }
        Err(e) => {
            log::warn!("run {} failed: {e}", rel.display());
            record.error = Some(e.to_string());
        }
    }
    record
}

fn reusable<B: DiffusionBackend>(dir: &Path, spec: &RunSpec, backend: &B) -> Option<GenerationManifest> {
    if !dir.join("image.png").is_file() {
        return None;
    }
    let manifest = GenerationManifest::read(&dir.join("manifest.json")).ok()?;
    (manifest.config.content_key() == spec.config.content_key() && &manifest.backend == backend.descriptor())
        .then_some(manifest)
}

/// One tile of a grid: an image and its caption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTile {
    pub label: String,
    pub image: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCellLabel {
    pub row: usize,
    pub col: usize,
    pub label: String,
    pub source: PathBuf,
}

/// Written next to the grid PNG as `<name>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    pub tile_width: u32,
    pub tile_height: u32,
    pub gutter: u32,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub cells: Vec<GridCellLabel>,
}

pub const GRID_GUTTER: u32 = 4;

/// Tile `tiles` row-major into a `rows x cols` PNG at `out`, with a JSON
/// sidecar holding the labels. All tiles must share one size.
pub fn compose_grid(
    tiles: &[GridTile],
    rows: usize,
    cols: usize,
    row_labels: &[String],
    col_labels: &[String],
    out: &Path,
) -> Result<GridLayout> {
    if tiles.is_empty() {
        return Err(Error::Empty("grid has no tiles".into()));
    }
    if rows * cols != tiles.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} tiles do not fill a {rows}x{cols} grid",
            tiles.len()
        )));
    }
    let missing: Vec<String> = tiles
        .iter()
        .filter(|t| !t.image.is_file())
        .map(|t| format!("{} ({})", t.label, t.image.display()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingImages(missing));
    }

    let images = tiles
        .iter()
        .map(|t| Ok(image::open(&t.image)?.to_rgb8()))
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = images[0].dimensions();
    if let Some((t, _)) = tiles.iter().zip(&images).find(|(_, im)| im.dimensions() != (w, h)) {
        return Err(Error::ShapeMismatch(format!(
            "tile {} is not {w}x{h}",
            t.image.display()
        )));
    }

    let g = GRID_GUTTER;
    let width = cols as u32 * w + (cols as u32 + 1) * g;
    let height = rows as u32 * h + (rows as u32 + 1) * g;
    let mut canvas = image::RgbImage::from_pixel(width, height, image::Rgb([255, 255, 255]));
    let mut cells = Vec::with_capacity(tiles.len());
    for (i, (tile, im)) in tiles.iter().zip(&images).enumerate() {
        let (row, col) = (i / cols, i % cols);
        let x = g + col as u32 * (w + g);
        let y = g + row as u32 * (h + g);
        image::imageops::replace(&mut canvas, im, x as i64, y as i64);
        cells.push(GridCellLabel {
            row,
            col,
            label: tile.label.clone(),
            source: tile.image.clone(),
        });
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    canvas.save_with_format(out, image::ImageFormat::Png)?;

    let layout = GridLayout {
        rows,
        cols,
        tile_width: w,
        tile_height: h,
        gutter: g,
        row_labels: row_labels.to_vec(),
        col_labels: col_labels.to_vec(),
        cells,
    };
    let sidecar = out.with_extension("json");
    fs::write(&sidecar, serde_json::to_string_pretty(&layout)? + "\n").map_err(|e| Error::io(&sidecar, e))?;
    Ok(layout)
}

/// Full-batch view of one pair: rows are the blend methods, columns the seeds.
pub fn appendix_grid(batch: &BatchManifest, batch_dir: &Path, pair: &str, out: &Path) -> Result<GridLayout> {
    let methods: Vec<BlendMethod> = BlendMethod::BLENDS
        .into_iter()
        .filter(|m| batch.methods.contains(m))
        .collect();
    let seeds = &batch.seeds;
    let mut tiles = Vec::with_capacity(methods.len() * seeds.len());
    let mut missing = Vec::new();
    for &method in &methods {
        for &seed in seeds {
            match batch.find(pair, method.slug(), seed) {
                Some(run) => tiles.push(GridTile {
                    label: format!("{method} seed {seed}"),
                    image: batch_dir.join(run.image()),
                }),
                None => missing.push(format!("{pair}/{}/{seed}", method.slug())),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingImages(missing));
    }
    compose_grid(
        &tiles,
        methods.len(),
        seeds.len(),
        &methods.iter().map(|m| m.name().to_string()).collect::<Vec<_>>(),
        &seeds.iter().map(|s| format!("seed {s}")).collect::<Vec<_>>(),
        out,
    )
}

/// Tiles for every run of a batch in its recorded order, `cols` per row.
pub fn batch_tiles(batch: &BatchManifest, batch_dir: &Path) -> Vec<GridTile> {
    batch
        .runs
        .iter()
        .map(|r| GridTile {
            label: format!("{}/{}/{}", r.pair, r.variant, r.seed),
            image: batch_dir.join(r.image()),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_has_the_five_groups() {
        let all = load_pairs(None).unwrap();
        assert_eq!(all.len(), 22);
        let sizes: Vec<usize> = Category::ALL
            .iter()
            .map(|&c| all.iter().filter(|p| p.category == c).count())
            .collect();
        assert_eq!(sizes, vec![5, 5, 5, 4, 3]);
    }

    #[test]
    fn category_filters() {
        let compound = load_pairs(Some("compound")).unwrap();
        assert_eq!(compound.len(), 5);
        assert!(compound.iter().any(|p| p.prompt_1 == "butter" && p.prompt_2 == "fly"));
        assert!(compound.iter().any(|p| p.prompt_1 == "bull" && p.prompt_2 == "pit"));
        let arch = load_pairs(Some("ARCHITECTURE")).unwrap();
        assert_eq!(arch.len(), 3);
        assert!(arch
            .iter()
            .any(|p| p.prompt_1 == "Leaning Tower of Pisa" && p.prompt_2 == "Big Ben"));
        assert!(matches!(load_pairs(Some("landscape")), Err(Error::Parse(_))));
    }

    #[test]
    fn style_prompts_keep_attribution() {
        let style = load_pairs(Some("style")).unwrap();
        assert!(style.iter().any(|p| p.prompt_2 == "Starry Night by van Gogh"));
        assert!(style.iter().all(|p| p.prompt_1 == "A portrait of a man"));
    }

    #[test]
    fn ids_are_unique_slugs() {
        let all = load_pairs(None).unwrap();
        let ids: BTreeSet<_> = all.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids.len(), 22);
        assert!(ids.contains("lion-cat"));
        assert!(ids.contains("kung_fu-panda"));
        assert!(ids.contains("leaning_tower_of_pisa-big_ben"));
    }

    #[test]
    fn duplicates_are_rejected() {
        let text = r#"
            [[pair]]
            category = "SAME"
            prompt_1 = "lion"
            prompt_2 = "cat"
            [[pair]]
            category = "DIFFERENT"
            prompt_1 = "lion"
            prompt_2 = "cat"
        "#;
        assert!(Registry::from_toml_str(text).is_err());
        let empty = "[[pair]]\ncategory = \"SAME\"\nprompt_1 = \"\"\nprompt_2 = \"cat\"\n";
        assert!(Registry::from_toml_str(empty).is_err());
    }

    #[test]
    fn preset_cardinalities() {
        let pair = Registry::bundled().get("lion-cat").unwrap().clone();
        assert_eq!(plan_batch(std::slice::from_ref(&pair), &BlendMethod::BLENDS, &DEFAULT_SEEDS).len(), 40);
        assert_eq!(symmetry_preset(&pair, &[0]).len(), 8);
        assert_eq!(seed_dependency_preset(&pair, 0).len(), 18);
        let sweep = ratio_sweep_preset(&pair, &DEFAULT_RATIOS, 0);
        assert_eq!(sweep.len(), 12);
        let ratios: BTreeSet<String> = sweep.runs.iter().map(|r| r.config.ratio.to_string()).collect();
        assert_eq!(ratios, ["0.25", "0.5", "0.75"].map(String::from).into());
        let splits: Vec<String> = unet_split_sweep(&pair, 0)
            .runs
            .iter()
            .map(|r| r.config.split.unwrap().label())
            .collect();
        assert_eq!(splits, ["1-6", "2-5", "3-4", "4-3", "5-2", "6-1"]);
    }

    #[test]
    fn run_directories_are_distinct() {
        let pair = Registry::bundled().get("lion-cat").unwrap().clone();
        for plan in [
            symmetry_preset(&pair, &[0, 1]),
            seed_dependency_preset(&pair, 3),
            ratio_sweep_preset(&pair, &DEFAULT_RATIOS, 0),
            unet_split_sweep(&pair, 0),
        ] {
            let dirs: BTreeSet<_> = plan.runs.iter().map(|r| r.rel_dir()).collect();
            assert_eq!(dirs.len(), plan.len());
        }
    }

    #[test]
    fn seed_regimes() {
        assert_eq!(SeedRegime::SharedNoise.seeds(5), (5, 5, 5));
        assert_eq!(SeedRegime::BlendSharesFirst.seeds(5), (5, 1005, 5));
        assert_eq!(SeedRegime::AllDistinct.seeds(5), (5, 1005, 2005));
    }

    #[test]
    fn empty_grid_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let r = compose_grid(&[], 0, 0, &[], &[], &dir.path().join("g.png"));
        assert!(matches!(r, Err(Error::Empty(_))));
    }

    #[test]
    fn missing_tile_is_listed() {
        let dir = tempfile::tempdir().unwrap();
        let tiles = vec![GridTile {
            label: "lion-cat/switch/0".into(),
            image: dir.path().join("nope.png"),
        }];
        match compose_grid(&tiles, 1, 1, &[], &[], &dir.path().join("g.png")) {
            Err(Error::MissingImages(list)) => assert!(list[0].contains("lion-cat/switch/0")),
            other => panic!("{other:?}"),
        }
    }
}
