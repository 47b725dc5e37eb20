use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use sap_core::dictionary::{build_dictionary, load_dictionary, save_dictionary};
use sap_core::fixture::{synthetic_scene, FIXTURE_SEED};
use sap_core::hsi::{container_paths, load_hsi, normalize, save_hsi, unfold, HsiCube};
use sap_core::metrics::{auc_indicators, render_map, roc_curves};
use sap_core::pipeline::{detect, PriorChoice};
use sap_core::prior::{DetectionMap, ThresholdMethod};
use sap_core::pseudo_anomaly::{emit_dataset, GenConfig};
use sap_core::SapError;

use crate::config::CliConfig;
use crate::manifest::ManifestBuilder;
use crate::{DetectArgs, DictArgs, EvalArgs, FixtureArgs, GenerateArgs, RenderArgs};

fn container_files(path: &Path) -> [PathBuf; 2] {
    let (hdr, raw) = container_paths(path);
    [hdr, raw]
}

/// `<base><suffix>` where `base` has any container extension stripped.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let (hdr, _) = container_paths(path);
    let s = hdr.to_string_lossy();
    PathBuf::from(format!("{}{suffix}", s.strip_suffix(".hdr.json").unwrap_or(&s)))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// Refuses to write over any of the inputs.
fn guard_outputs(inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
    let canon = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    for o in outputs {
        if inputs.iter().any(|i| canon(i) == canon(o)) {
            return Err(SapError::InvalidArgument(format!("output {} would overwrite an input", o.display())).into());
        }
    }
    Ok(())
}

fn single_band(path: &Path, what: &str) -> Result<HsiCube> {
    let cube = load_hsi(path)?;
    if cube.bands() != 1 {
        return Err(SapError::Shape(format!("{what} {} has {} bands, expected 1", path.display(), cube.bands())).into());
    }
    Ok(cube)
}

pub fn generate(args: &GenerateArgs, cfg: &CliConfig) -> Result<()> {
    let sources: Vec<HsiCube> = args.input.iter().map(load_hsi).collect::<sap_core::Result<_>>()?;
    let bands = sources[0].bands();
    let mut gen = cfg.generate.clone().unwrap_or_else(|| GenConfig::for_bands(bands, 0));
    if let Some(seed) = args.seed {
        gen.seed = seed;
    }
    let mut run = ManifestBuilder::new("generate", &CliConfig { generate: Some(gen.clone()), ..cfg.clone() });
    run.seed("generate", gen.seed);
    run.inputs(args.input.iter().flat_map(|p| container_files(p)))?;
    let manifest = emit_dataset(&sources, &gen, &args.out)?;
    run.output(args.out.join("manifest.json"));
    run.write(&args.out.join("run.manifest.json"))?;
    println!(
        "wrote {} pairs ({} train, {} val) to {}",
        manifest.pairs.len(),
        manifest.train_pairs,
        manifest.val_pairs,
        args.out.display()
    );
    Ok(())
}

pub fn fixture(args: &FixtureArgs, cfg: &CliConfig) -> Result<()> {
    let seed = args.seed.unwrap_or(FIXTURE_SEED);
    let scene = synthetic_scene(seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let (cube, truth) = (args.out.join("scene"), args.out.join("truth"));
    save_hsi(&scene.cube, &cube)?;
    save_hsi(&scene.truth_cube(), &truth)?;
    let mut run = ManifestBuilder::new("fixture", cfg);
    run.seed("fixture", seed).output(container_paths(&cube).0).output(container_paths(&truth).0);
    run.write(&args.out.join("fixture.manifest.json"))?;
    println!("wrote fixture with {} anomalous pixels to {}", scene.anomaly_count(), args.out.display());
    Ok(())
}

pub fn dict(args: &DictArgs, cfg: &CliConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    let d = &mut cfg.pipeline.dict;
    if let Some(v) = args.clusters {
        d.n_clusters = v;
    }
    if let Some(v) = args.drop_quantile {
        d.drop_quantile = v;
    }
    if let Some(v) = args.max_atoms {
        d.max_atoms = Some(v);
    }
    if let Some(v) = args.latent_dim {
        d.latent_dim = v;
    }
    if let Some(v) = args.seed {
        d.seed = v;
    }

    let inputs = container_files(&args.input);
    let (dict_hdr, dict_raw) = sap_core::dictionary::dictionary_paths(&args.out);
    let base = dict_hdr.to_string_lossy().trim_end_matches(".dict.json").to_string();
    let latent_base = PathBuf::from(format!("{base}.latent"));
    let latent_files = container_files(&latent_base);
    guard_outputs(&inputs, &[dict_hdr.clone(), dict_raw.clone(), latent_files[0].clone(), latent_files[1].clone()])?;

    let mut run = ManifestBuilder::new("dict", &cfg);
    run.seed("dict", cfg.pipeline.dict.seed).inputs(&inputs)?;
    let cube = load_hsi(&args.input)?;
    let (latent, dictionary) = build_dictionary(&normalize(&cube, cfg.pipeline.normalize), &cfg.pipeline.dict)?;

    ensure_parent(&dict_hdr)?;
    let latent_cube = sap_core::fold(&latent.matrix)?;
    save_hsi(&latent_cube, &latent_base)?;
    let latent_name = latent_base.file_name().expect("file name").to_string_lossy().to_string();
    save_dictionary(&dictionary, Some(&latent_name), &args.out)?;
    run.output(&dict_hdr).output(&dict_raw).output(&latent_files[0]).output(&latent_files[1]);
    run.write(Path::new(&format!("{base}.manifest.json")))?;
    println!("dictionary: {} atoms of dimension {} -> {}", dictionary.nb(), dictionary.dim(), dict_hdr.display());
    Ok(())
}

pub fn detect_cmd(args: &DetectArgs, cfg: &CliConfig) -> Result<()> {
    let mut cfg = cfg.clone();
    let (p, s) = (&mut cfg.pipeline.prior, &mut cfg.pipeline.solver);
    if let Some(v) = args.cube {
        p.cube_size = v;
    }
    if let Some(v) = args.stride {
        p.stride = v;
    }
    if let Some(v) = &args.threshold {
        p.threshold_method = v.parse::<ThresholdMethod>()?;
    }
    if let Some(v) = args.k {
        p.k = v;
    }
    if let Some(v) = args.max_iter {
        s.max_iter = v;
    }
    if let Some(v) = args.tol {
        s.tol = v;
    }
    let prior_spec = match args.baseline_l21 {
        Some(beta) => format!("l21:{beta}"),
        None => args.prior.clone(),
    };
    let prior = PriorChoice::parse(&prior_spec)?;

    let mut inputs: Vec<PathBuf> = container_files(&args.input).to_vec();
    if let Some(d) = &args.dict {
        let (hdr, raw) = sap_core::dictionary::dictionary_paths(d);
        inputs.extend([hdr, raw]);
    }
    if let Some(w) = prior_spec.strip_prefix("cnn:") {
        inputs.push(PathBuf::from(w));
    }
    let map_files = container_files(&args.out);
    let history = sibling(&args.out, ".history.csv");
    let manifest_path = sibling(&args.out, ".manifest.json");
    guard_outputs(&inputs, &[map_files[0].clone(), map_files[1].clone(), history.clone(), manifest_path.clone()])?;

    let cube = load_hsi(&args.input)?;
    let (h, w) = (cube.height(), cube.width());
    let mut run = ManifestBuilder::new("detect", &cfg);
    if let PriorChoice::Fallback { seed } = prior {
        run.seed("prior", seed);
    }

    let (latent, atoms) = match &args.dict {
        Some(path) => {
            let (dictionary, header) = load_dictionary(path)?;
            let latent_name = header
                .latent
                .ok_or_else(|| SapError::InvalidArgument(format!("dictionary {} names no latent cube", path.display())))?;
            let dir = sap_core::dictionary::dictionary_paths(path).0.parent().map(Path::to_path_buf).unwrap_or_default();
            let latent_path = dir.join(latent_name);
            inputs.extend(container_files(&latent_path));
            let latent = load_hsi(&latent_path)?;
            if (latent.height(), latent.width()) != (h, w) {
                bail!(SapError::Shape(format!(
                    "latent cube is {}x{}, input is {h}x{w}",
                    latent.height(),
                    latent.width()
                )));
            }
            (unfold(&latent).into_values(), dictionary.atoms)
        }
        None => {
            run.seed("dict", cfg.pipeline.dict.seed);
            let (latent, dictionary) = build_dictionary(&normalize(&cube, cfg.pipeline.normalize), &cfg.pipeline.dict)?;
            (latent.matrix.into_values(), dictionary.atoms)
        }
    };
    run.inputs(&inputs)?;

    let (out, map) = detect(&latent, &atoms, h, w, &prior, &cfg.pipeline.prior, &cfg.pipeline.solver)?;
    ensure_parent(&map_files[0])?;
    save_hsi(&HsiCube::new(1, h, w, map.scores.clone())?, &args.out)?;
    fs::write(&history, out.history_csv()).with_context(|| format!("writing {}", history.display()))?;
    run.output(&map_files[0]).output(&map_files[1]).history(&history);
    run.write(&manifest_path)?;
    println!(
        "{} iterations ({}), final primal residual {:.3e} -> {}",
        out.iterations,
        if out.converged { "converged" } else { "iteration cap" },
        out.final_primal_residual().unwrap_or(0.0),
        map_files[0].display()
    );
    Ok(())
}

pub fn eval(args: &EvalArgs, cfg: &CliConfig) -> Result<()> {
    let scores = single_band(&args.scores, "score map")?;
    let truth = single_band(&args.truth, "truth mask")?;
    if (scores.height(), scores.width()) != (truth.height(), truth.width()) {
        bail!(SapError::Shape(format!(
            "scores are {}x{}, truth is {}x{}",
            scores.height(),
            scores.width(),
            truth.height(),
            truth.width()
        )));
    }
    let mut inputs = container_files(&args.scores).to_vec();
    inputs.extend(container_files(&args.truth));
    let manifest_path = PathBuf::from(format!("{}.manifest.json", args.report.display()));
    guard_outputs(&inputs, &[args.report.clone(), manifest_path.clone()])?;
    let mut run = ManifestBuilder::new("eval", cfg);
    run.inputs(&inputs)?;

    let mask: Vec<bool> = truth.data().iter().map(|&v| v > 0.5).collect();
    let report = auc_indicators(&roc_curves(scores.data(), &mask)?);
    ensure_parent(&args.report)?;
    fs::write(&args.report, report.to_csv()).with_context(|| format!("writing {}", args.report.display()))?;
    run.output(&args.report).write(&manifest_path)?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn render(args: &RenderArgs, cfg: &CliConfig) -> Result<()> {
    let scores = single_band(&args.scores, "score map")?;
    let inputs = container_files(&args.scores);
    let manifest_path = PathBuf::from(format!("{}.manifest.json", args.out.display()));
    guard_outputs(&inputs, &[args.out.clone(), manifest_path.clone()])?;
    let mut run = ManifestBuilder::new("render", cfg);
    run.inputs(&inputs)?;
    let map = DetectionMap::new(scores.height(), scores.width(), scores.data().to_vec())?;
    ensure_parent(&args.out)?;
    render_map(&map, &args.out)?;
    run.output(&args.out).write(&manifest_path)?;
    Ok(())
}
