use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use pso_shield::bench::{run_bench, run_synthetic, BenchOptions, BenchReport, SyntheticSpec};
use pso_shield::image::PixelBuffer;
use pso_shield::keycore::{capability_matrix, recover_max_group, setup as keycore_setup, WrappedKeyStore};
use pso_shield::metadata::ingest::read_detections;
use pso_shield::metadata::ImageMetadata;
use pso_shield::pipeline::{build_metadata, PipelineSettings};
use pso_shield::postcorrect::{ClassifierPort, OcrPort};
use pso_shield::regioncrypt::{protect_image, unlock_image, ProtectedImage};
use pso_shield::repository::{
    decode_key_store, load_container, load_key_store, load_service_state, load_user_key, store_container,
    store_key_store, store_service_state, store_user_key, verify_repository, write_atomic, CONTAINER_EXTENSION,
};
use pso_shield::Error;
use serde_json::json;

use crate::config::SystemConfig;
use crate::hooks::{SubprocessClassifier, SubprocessOcr};
use crate::png_io::{read_png, write_png};

pub const EXIT_IO: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_DENIED: u8 = 3;
pub const EXIT_INTEGRITY: u8 = 4;

/// The user key opens no sensitivity group.
#[derive(Debug)]
pub struct Denied;

impl fmt::Display for Denied {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("no authorized sensitivity group")
    }
}

impl std::error::Error for Denied {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<Denied>().is_some() {
            return EXIT_DENIED;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return if e.is_validation() {
                EXIT_VALIDATION
            } else if e.is_integrity() {
                EXIT_INTEGRITY
            } else {
                EXIT_IO
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_IO
}

fn load_config(path: Option<&Path>) -> Result<SystemConfig> {
    let path = path.ok_or_else(|| Error::Validation("this command needs --config".into()))?;
    SystemConfig::load(path)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn refuse_existing(path: &Path, force: bool, what: &str) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Validation(format!(
            "{what} {} already exists; pass --force to replace it",
            path.display()
        ))
        .into());
    }
    Ok(())
}

fn join_groups(groups: impl IntoIterator<Item = u16>) -> String {
    groups.into_iter().map(|g| g.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn setup(config: Option<&Path>, force: bool) -> Result<()> {
    let cfg = load_config(config)?;
    let paths = &cfg.paths;
    refuse_existing(&paths.key_service, force, "key-service state")?;
    let s = keycore_setup(&cfg.roles, cfg.group_count())?;
    for p in [&paths.key_service, &paths.key_store] {
        ensure_parent(p)?;
    }
    fs::create_dir_all(&paths.repository)?;
    store_service_state(&s.state, &paths.key_service)?;
    store_key_store(&s.store, &paths.key_store)?;
    write_atomic(&paths.roster(), b"{}\n")?;

    println!("sensitivity groups: {}", cfg.group_count());
    println!(
        "wrapped group keys: {} (written to {})",
        s.wrap_operations,
        paths.key_store.display()
    );
    println!();
    println!("{:<6} policy", "group");
    let matrix = capability_matrix(&s.state, &s.store)?;
    for row in &matrix {
        println!("{:<6} {}", row.group, row.formula());
    }
    println!();
    println!("{:<12} {:<10} opens groups", "attribute", "max group");
    for (attr, max) in &cfg.roles {
        let opens = matrix.iter().filter(|r| r.attributes.contains(attr)).map(|r| r.group);
        println!("{attr:<12} {max:<10} {}", join_groups(opens));
    }
    Ok(())
}

type Roster = BTreeMap<String, BTreeSet<String>>;

fn read_roster(path: &Path) -> Result<Roster> {
    match fs::read(path) {
        Ok(bytes) => Ok(serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt {
            what: path.display().to_string(),
            reason: format!("roster: {e}"),
        })?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Roster::new()),
        Err(e) => Err(e).with_context(|| format!("reading {}", path.display())),
    }
}

pub fn register(
    config: Option<&Path>,
    user: &str,
    attributes: &[String],
    out: Option<&Path>,
    force: bool,
) -> Result<()> {
    let cfg = load_config(config)?;
    let state = load_service_state(&cfg.paths.key_service)?;
    let roster_path = cfg.paths.roster();
    let mut roster = read_roster(&roster_path)?;
    if roster.contains_key(user) && !force {
        return Err(Error::Validation(format!("user {user:?} is already registered; pass --force to re-issue")).into());
    }
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(format!("{user}.s2sk")));
    refuse_existing(&out, force, "key file")?;

    let attrs: BTreeSet<String> = attributes.iter().cloned().collect();
    let sk = state.register(user, &attrs)?;
    ensure_parent(&out)?;
    store_user_key(&sk, &out)?;
    roster.insert(user.to_string(), attrs.clone());
    write_atomic(&roster_path, serde_json::to_string_pretty(&roster)?.as_bytes())?;

    let max = attrs
        .iter()
        .filter_map(|a| state.roles.get(a))
        .max()
        .copied()
        .unwrap_or(0);
    let listed = attrs.iter().cloned().collect::<Vec<_>>().join(", ");
    println!("registered {user} with {{{listed}}}");
    if max == 0 {
        println!("this key opens no sensitivity group");
    } else {
        println!("opens groups {}", join_groups(1..=max));
    }
    println!("key written to {}", out.display());
    Ok(())
}

fn file_stem_for(image_id: &str) -> String {
    image_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn protect(config: Option<&Path>, image_path: &Path, annotations: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let image = read_png(image_path)?;
    let doc = fs::read(annotations).with_context(|| format!("reading {}", annotations.display()))?;
    let detections = read_detections(&doc)?;

    let reference = cfg.pipeline.postcorrect.classifier()?;
    let external = cfg.hooks.classifier.clone().map(SubprocessClassifier::new);
    let classifier: &dyn ClassifierPort = match &external {
        Some(c) => c,
        None => &reference,
    };
    let ocr = cfg.hooks.ocr.clone().map(|argv| {
        SubprocessOcr::new(
            argv,
            fs::canonicalize(image_path).unwrap_or_else(|_| image_path.to_path_buf()),
        )
    });
    let outcome = build_metadata(
        &detections,
        &image,
        &cfg.pipeline,
        ocr.as_ref().map(|o| o as &dyn OcrPort),
        classifier,
    )?;
    for line in &outcome.log {
        eprintln!("note: {line}");
    }

    let state = load_service_state(&cfg.paths.key_service)?;
    let protected = protect_image(&image, &outcome.metadata, &state.top_chain)?;
    let out = match out {
        Some(p) => p.to_path_buf(),
        None => cfg.paths.repository.join(format!(
            "{}.{CONTAINER_EXTENSION}",
            file_stem_for(&outcome.metadata.image_id)
        )),
    };
    ensure_parent(&out)?;
    store_container(&protected, &out)?;

    print_pso_table(&protected);
    println!("container written to {}", out.display());
    Ok(())
}

fn print_pso_table(p: &ProtectedImage) {
    println!(
        "{:<4} {:<18} {:<11} {:<7} {:<6} {:>8} {:>10}",
        "id", "label", "modality", "score", "group", "pixels", "blob bytes"
    );
    for (a, b) in p.metadata.annotations.iter().zip(&p.blobs) {
        println!(
            "{:<4} {:<18} {:<11} {:<7} {:<6} {:>8} {:>10}",
            a.id,
            a.label,
            a.modality.as_str(),
            a.sensitivity_score.to_string(),
            a.group,
            b.pixel_count,
            b.ciphertext.len()
        );
    }
}

/// The key store a user key reads from, cached beside the key after the first fetch.
fn cached_store(key: &Path, config: Option<&Path>, override_path: Option<&Path>) -> Result<WrappedKeyStore> {
    let mut cache_name = key.file_name().unwrap_or_default().to_os_string();
    cache_name.push(".store");
    let cache = key.with_file_name(cache_name);
    if override_path.is_none() && cache.exists() {
        let store = load_key_store(&cache)?;
        eprintln!("note: using cached wrapped keys {}", cache.display());
        return Ok(store);
    }
    let source = match override_path {
        Some(p) => p.to_path_buf(),
        None => {
            load_config(config)
                .context("no cached wrapped keys; give --key-store or --config")?
                .paths
                .key_store
        }
    };
    let bytes = fs::read(&source).with_context(|| format!("reading {}", source.display()))?;
    let store = decode_key_store(&bytes)?;
    store.validate()?;
    write_atomic(&cache, &bytes)?;
    Ok(store)
}

pub fn unlock(
    config: Option<&Path>,
    container: &Path,
    key: Option<&Path>,
    key_store: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let protected = load_container(container)?;
    let Some(key) = key else {
        let unlocked = unlock_image(&protected, None)?;
        write_png(out, &unlocked.image)?;
        println!(
            "no key supplied; exported the stored scrambled image to {}",
            out.display()
        );
        return Ok(());
    };
    let sk = load_user_key(key)?;
    let store = cached_store(key, config, key_store)?;
    let recovery = recover_max_group(&sk, &store)?.ok_or(Denied)?;
    let unlocked = unlock_image(&protected, Some(&recovery.chain))?;
    write_png(out, &unlocked.image)?;

    println!(
        "user {} opened groups {}",
        sk.user_id(),
        join_groups(1..=recovery.group())
    );
    let still_locked: Vec<String> = protected
        .blobs
        .iter()
        .filter(|b| b.group > recovery.group() && !b.is_empty())
        .map(|b| b.pso_id.to_string())
        .collect();
    let restored: Vec<String> = unlocked.restored.iter().map(u32::to_string).collect();
    println!("restored PSOs: [{}]", restored.join(", "));
    println!("still scrambled: [{}]", still_locked.join(", "));
    println!("image written to {}", out.display());
    Ok(())
}

pub fn inspect(container: &Path, as_json: bool) -> Result<()> {
    let p = load_container(container)?;
    let m = &p.metadata;
    if as_json {
        let psos: Vec<_> = m
            .annotations
            .iter()
            .zip(&p.blobs)
            .map(|(a, b)| {
                json!({
                    "id": a.id,
                    "label": a.label,
                    "modality": a.modality.as_str(),
                    "group": a.group,
                    "sensitivity_score": a.sensitivity_score.to_f64(),
                    "pixels": b.pixel_count,
                    "blob_bytes": b.ciphertext.len(),
                })
            })
            .collect();
        let summary = json!({
            "image_id": m.image_id,
            "width": m.width,
            "height": m.height,
            "channels": m.channels,
            "group_count": m.group_count(),
            "encrypted_bytes": p.encrypted_bytes(),
            "psos": psos,
        });
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        println!(
            "{}: {}x{}x{}, {} groups, {} PSOs, {} encrypted bytes",
            m.image_id,
            m.width,
            m.height,
            m.channels,
            m.group_count(),
            m.annotations.len(),
            p.encrypted_bytes()
        );
        if !m.annotations.is_empty() {
            print_pso_table(&p);
        }
    }
    Ok(())
}

pub fn verify(config: Option<&Path>, repository: Option<&Path>) -> Result<()> {
    let dir = match repository {
        Some(d) => d.to_path_buf(),
        None => load_config(config)?.paths.repository,
    };
    let report = verify_repository(&dir)?;
    print!("{report}");
    if report.passed() {
        println!("repository ok");
        Ok(())
    } else {
        let n = report.failures().count();
        Err(Error::Integrity(format!("{n} file(s) failed verification")).into())
    }
}

pub struct BenchRequest {
    pub corpus: Option<PathBuf>,
    pub images: usize,
    pub seed: u64,
    pub min_side: u32,
    pub max_side: u32,
    pub repetitions: usize,
    pub csv: Option<PathBuf>,
}

fn load_corpus(dir: &Path, settings: &PipelineSettings) -> Result<Vec<(PixelBuffer, ImageMetadata)>> {
    let mut pngs: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    pngs.sort();
    let classifier = settings.postcorrect.classifier()?;
    let mut items = Vec::new();
    for png in pngs {
        let ann = png.with_extension("json");
        if !ann.exists() {
            eprintln!("note: skipping {} (no {})", png.display(), ann.display());
            continue;
        }
        let image = read_png(&png)?;
        let set = read_detections(&fs::read(&ann)?).with_context(|| format!("reading {}", ann.display()))?;
        let outcome = build_metadata(&set, &image, settings, None, &classifier)
            .with_context(|| format!("building metadata for {}", png.display()))?;
        items.push((image, outcome.metadata));
    }
    if items.is_empty() {
        return Err(anyhow!(Error::Validation(format!(
            "no PNG/JSON pairs in {}",
            dir.display()
        ))));
    }
    Ok(items)
}

pub fn bench(config: Option<&Path>, req: &BenchRequest) -> Result<()> {
    let settings = match config {
        Some(_) => load_config(config)?.pipeline,
        None => PipelineSettings::default(),
    };
    let options = BenchOptions {
        repetitions: req.repetitions,
    };
    let l = settings.table.group_count();
    let report: BenchReport = match &req.corpus {
        Some(dir) => run_bench(load_corpus(dir, &settings)?, l, &options)?,
        None => {
            let spec = SyntheticSpec {
                images: req.images,
                min_side: req.min_side,
                max_side: req.max_side,
                seed: req.seed,
                table: settings.table.clone(),
                ..Default::default()
            };
            run_synthetic(&spec, &options)?
        }
    };

    let csv = report.to_csv()?;
    match &req.csv {
        Some(path) => {
            ensure_parent(path)?;
            fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
        }
        None => print!("{csv}"),
    }
    // summary goes to stderr so stdout stays pure CSV
    eprintln!("images measured: {} (sequential)", report.records.len());
    for (id, reason) in &report.failures {
        eprintln!("failed: {id}: {reason}");
    }
    if let Some(enc) = report.encrypt_median() {
        eprintln!("median encrypt: {enc:.6} s");
    }
    for (k, t) in report.decrypt_medians().iter().enumerate() {
        eprintln!("median decrypt at key {}: {t:.6} s", k + 1);
    }
    if let Ok(fit) = report.time_fit() {
        eprintln!(
            "encrypt time vs pixels: slope {:.3e} s/px, R^2 {:.4}",
            fit.slope, fit.r_squared
        );
    }
    if let Ok(fit) = report.overhead_fit() {
        eprintln!(
            "overhead vs encrypted bytes: slope {:.4}, R^2 {:.4}",
            fit.slope, fit.r_squared
        );
    }
    Ok(())
}
