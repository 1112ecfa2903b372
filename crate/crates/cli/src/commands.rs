use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use camdiffuse::array_io::{read_array, write_array, ArrayFile};
use camdiffuse::diffusion::{ad_cam, class_maps, DiffusionConfig, PreparedAttention};
use camdiffuse::eval::{sensitivity_sweep, sweep_threshold, threshold_grid, EvalImage, SweepImage};
use camdiffuse::manifest::{discover_manifests, Instance};
use camdiffuse::random_walk::{build_transition, rw_refine, BoundaryMap};
use camdiffuse::synth::{write_dataset, SynthSpec};
use camdiffuse::{ActivationMap, Grid};

use crate::report;
use crate::{AdcamArgs, Command, DiffusionArgs, EvalArgs, InputArgs, RefineArgs, RwArgs, SweepArgs, SynthArgs};

pub const MAP_INDEX: &str = "maps.json";
pub const RUN_RECORD: &str = "run.json";

/// Bad usage or input that the caller can fix.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

/// Library errors all stem from rejected inputs or parameters; output
/// failures are raised as plain messages and count as internal.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|c| c.is::<InputError>() || c.is::<camdiffuse::Error>()) {
        2
    } else {
        1
    }
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Adcam(args) => cmd_adcam(args),
        Command::Cam(args) => cmd_cam(args),
        Command::RefineAtt(args) => cmd_refine_att(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::GenSynth(args) => cmd_gen_synth(args),
        Command::RwRefine(args) => cmd_rw_refine(args),
    }
}

fn load_instances(inputs: &[PathBuf]) -> Result<Vec<Instance>> {
    if inputs.is_empty() {
        return Err(input_error("no input manifests given"));
    }
    let paths = discover_manifests(inputs)?;
    if paths.is_empty() {
        return Err(input_error("no manifests found under the given inputs"));
    }
    let instances: Vec<Instance> = paths
        .par_iter()
        .map(|p| Instance::load(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<_>>()?;
    let mut ids = BTreeSet::new();
    for inst in &instances {
        if !ids.insert(inst.id.as_str()) {
            return Err(input_error(format!("image id {} appears more than once", inst.id)));
        }
    }
    info!("loaded {} images", instances.len());
    Ok(instances)
}

fn diffusion_config(args: &DiffusionArgs) -> Result<DiffusionConfig> {
    let cfg = if args.no_renormalize { DiffusionConfig::raw(args.steps)? } else { DiffusionConfig::new(args.steps)? };
    Ok(cfg)
}

fn parse_thresholds(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, step] = parts.as_slice() else {
        return Err(input_error(format!("thresholds must look like lo:hi:step, got {spec:?}")));
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| input_error(format!("bad number {s:?} in thresholds")));
    Ok(threshold_grid(num(lo)?, num(hi)?, num(step)?)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn save_array(path: &Path, arr: &ArrayFile) -> Result<()> {
    write_array(path, arr).map_err(|e| anyhow!("writing {}: {e}", path.display()))
}

fn save_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct RunRecord<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a C,
    images: Vec<&'a str>,
}

fn save_run_record<C: Serialize>(out: &Path, command: &str, config: &C, images: Vec<&str>) -> Result<()> {
    let record = RunRecord { command, version: env!("CARGO_PKG_VERSION"), config, images };
    save_json(&out.join(RUN_RECORD), &record)
}

/// Per-image listing of the maps a command wrote.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapIndex {
    pub id: String,
    pub kind: String,
    pub grid: [usize; 2],
    pub maps: Vec<MapEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapEntry {
    pub class_id: usize,
    pub path: String,
}

fn save_maps(out: &Path, id: &str, kind: &str, maps: &[ActivationMap]) -> Result<()> {
    let dir = out.join(id);
    create_dir(&dir)?;
    let grid = maps.first().map(|m| m.grid).unwrap_or(Grid::new(0, 0));
    let mut entries = Vec::with_capacity(maps.len());
    for m in maps {
        let name = format!("{kind}_c{}.npy", m.class_id);
        let arr = ArrayFile::f32(vec![m.grid.height, m.grid.width], m.to_f32())?;
        save_array(&dir.join(&name), &arr)?;
        entries.push(MapEntry { class_id: m.class_id, path: name });
    }
    let index = MapIndex { id: id.into(), kind: kind.into(), grid: [grid.height, grid.width], maps: entries };
    save_json(&dir.join(MAP_INDEX), &index)
}

fn write_all_maps(out: &Path, kind: &str, results: &[(&Instance, Vec<ActivationMap>)]) -> Result<()> {
    create_dir(out)?;
    results.par_iter().try_for_each(|(inst, maps)| save_maps(out, &inst.id, kind, maps))
}

fn ids(instances: &[Instance]) -> Vec<&str> {
    instances.iter().map(|i| i.id.as_str()).collect()
}

fn cmd_adcam(args: &AdcamArgs) -> Result<()> {
    let cfg = diffusion_config(&args.diffusion)?;
    let instances = load_instances(&args.input.inputs)?;
    let results: Vec<(&Instance, Vec<ActivationMap>)> = instances
        .par_iter()
        .map(|inst| {
            let maps = ad_cam(&inst.features, &inst.weights, &inst.attention, &inst.labels, args.diffusion.k, cfg)
                .with_context(|| format!("image {}", inst.id))?;
            Ok((inst, maps))
        })
        .collect::<Result<_>>()?;
    write_all_maps(&args.input.out, "adcam", &results)?;
    save_run_record(&args.input.out, "adcam", args, ids(&instances))
}

fn cmd_cam(args: &InputArgs) -> Result<()> {
    let instances = load_instances(&args.inputs)?;
    let results: Vec<(&Instance, Vec<ActivationMap>)> = instances
        .par_iter()
        .map(|inst| Ok((inst, class_maps(&inst.features, &inst.weights, &inst.labels)?)))
        .collect::<Result<_>>()?;
    write_all_maps(&args.out, "cam", &results)?;
    save_run_record(&args.out, "cam", args, ids(&instances))
}

#[derive(Serialize)]
struct RefinedIndex<'a> {
    id: &'a str,
    grid: [usize; 2],
    k: usize,
    nnz: usize,
    offsets: &'a str,
    indices: &'a str,
    weights: &'a str,
}

fn cmd_refine_att(args: &RefineArgs) -> Result<()> {
    let instances = load_instances(&args.input.inputs)?;
    let refined: Vec<_> = instances
        .par_iter()
        .map(|inst| {
            let r = PreparedAttention::new(&inst.attention, inst.grid())?
                .refine(args.k)
                .with_context(|| format!("image {}", inst.id))?;
            Ok((inst, r))
        })
        .collect::<Result<_>>()?;
    let out = &args.input.out;
    create_dir(out)?;
    refined.par_iter().try_for_each(|(inst, r)| {
        let dir = out.join(&inst.id);
        create_dir(&dir)?;
        let m = r.matrix();
        save_array(&dir.join("refined_offsets.npy"), &ArrayFile::u32(vec![m.offsets().len()], m.offsets().to_vec())?)?;
        save_array(&dir.join("refined_indices.npy"), &ArrayFile::u32(vec![m.nnz()], m.indices().to_vec())?)?;
        let weights = m.weights().iter().map(|&w| w as f32).collect();
        save_array(&dir.join("refined_weights.npy"), &ArrayFile::f32(vec![m.nnz()], weights)?)?;
        let g = inst.grid();
        let index = RefinedIndex {
            id: &inst.id,
            grid: [g.height, g.width],
            k: args.k,
            nnz: m.nnz(),
            offsets: "refined_offsets.npy",
            indices: "refined_indices.npy",
            weights: "refined_weights.npy",
        };
        save_json(&dir.join("refined.json"), &index)
    })?;
    save_run_record(out, "refine-att", args, ids(&instances))
}

fn load_predictions(pred: &Path, id: &str) -> Result<Vec<ActivationMap>> {
    let dir = pred.join(id);
    let index_path = dir.join(MAP_INDEX);
    let text =
        fs::read_to_string(&index_path).map_err(|e| input_error(format!("reading {}: {e}", index_path.display())))?;
    let index: MapIndex =
        serde_json::from_str(&text).map_err(|e| input_error(format!("parsing {}: {e}", index_path.display())))?;
    let grid = Grid::new(index.grid[0], index.grid[1]);
    index
        .maps
        .iter()
        .map(|e| {
            let path = dir.join(&e.path);
            let (shape, data) =
                read_array(&path)?.into_f32(2).with_context(|| format!("reading {}", path.display()))?;
            if Grid::new(shape[0], shape[1]) != grid {
                return Err(input_error(format!(
                    "{} has shape {shape:?}, index says {:?}",
                    path.display(),
                    index.grid
                )));
            }
            Ok(ActivationMap::new(e.class_id, grid, data.into_iter().map(f64::from).collect())?)
        })
        .collect()
}

fn prediction_ids(pred: &Path) -> Result<BTreeSet<String>> {
    let entries = fs::read_dir(pred).map_err(|e| input_error(format!("reading {}: {e}", pred.display())))?;
    let mut out = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| input_error(format!("reading {}: {e}", pred.display())))?;
        if entry.path().join(MAP_INDEX).is_file() {
            out.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(out)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let thresholds = parse_thresholds(&args.thresholds)?;
    let instances = load_instances(&args.inputs)?;
    let predicted = prediction_ids(&args.pred)?;
    let wanted: BTreeSet<String> = instances.iter().map(|i| i.id.clone()).collect();
    if let Some(id) = wanted.difference(&predicted).next() {
        return Err(input_error(format!("image {id} has no predictions under {}", args.pred.display())));
    }
    if let Some(id) = predicted.difference(&wanted).next() {
        return Err(input_error(format!("predictions for {id} have no matching manifest")));
    }
    let images: Vec<EvalImage> = instances
        .par_iter()
        .map(|inst| {
            let gt = inst
                .gt_mask
                .clone()
                .ok_or_else(|| input_error(format!("image {} has no ground-truth mask", inst.id)))?;
            let maps = load_predictions(&args.pred, &inst.id)?;
            Ok(EvalImage { maps, gt })
        })
        .collect::<Result<_>>()?;
    let reports = sweep_threshold(&images, &thresholds)?;
    create_dir(&args.out)?;
    let classes = instances[0].num_classes();
    report::write_eval_csv(&args.out.join("eval.csv"), &reports, classes)?;
    let best = camdiffuse::eval::best_report(&reports).expect("threshold grid is nonempty");
    save_json(&args.out.join("best.json"), &report::best_record(best))?;
    info!("best threshold {} miou {:.4}", best.threshold, best.scores.miou);
    save_run_record(&args.out, "eval", args, ids(&instances))
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let thresholds = parse_thresholds(&args.thresholds)?;
    if args.k_values.is_empty() || args.t_values.is_empty() {
        return Err(input_error("k and T grids must be nonempty"));
    }
    let instances = load_instances(&args.input.inputs)?;
    let images: Vec<SweepImage> = instances
        .par_iter()
        .map(|inst| SweepImage::new(inst).with_context(|| format!("image {}", inst.id)))
        .collect::<Result<_>>()?;
    let rows = sensitivity_sweep(&images, &args.k_values, &args.t_values, &thresholds)?;
    let out = &args.input.out;
    create_dir(out)?;
    report::write_sensitivity_csv(&out.join("sensitivity.csv"), &rows)?;
    if args.plot {
        let svg = report::sensitivity_svg(&rows);
        fs::write(out.join("sensitivity.svg"), svg).context("writing sensitivity.svg")?;
    }
    save_run_record(out, "sweep", args, ids(&instances))
}

fn cmd_gen_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| input_error(format!("reading {}: {e}", path.display())))?;
            serde_json::from_str::<SynthSpec>(&text)
                .map_err(|e| input_error(format!("parsing {}: {e}", path.display())))?
        }
        None => SynthSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(images) = args.images {
        spec.images = images;
    }
    spec.validate()?;
    create_dir(&args.out)?;
    let written = write_dataset(&spec, &args.out).map_err(|e| anyhow!("writing dataset: {e}"))?;
    save_json(&args.out.join("synth_spec.json"), &spec)?;
    info!("wrote {} synthetic images", written.len());
    Ok(())
}

fn load_boundary(path: &Path, grid: Grid) -> Result<BoundaryMap> {
    let (shape, data) = read_array(path)?.into_f32(2).with_context(|| format!("reading {}", path.display()))?;
    let found = Grid::new(shape[0], shape[1]);
    if found != grid {
        return Err(camdiffuse::Error::GridMismatch { left: found.dims(), right: grid.dims() }.into());
    }
    Ok(BoundaryMap::new(grid, data.into_iter().map(f64::from).collect())?)
}

fn cmd_rw_refine(args: &RwArgs) -> Result<()> {
    let cfg = diffusion_config(&args.diffusion)?;
    let instances = load_instances(&args.input.inputs)?;
    if args.boundary.is_some() && instances.len() != 1 {
        return Err(input_error("--boundary applies to a single input; give each manifest its own boundary entry"));
    }
    let boundaries: Vec<BoundaryMap> = instances
        .iter()
        .map(|inst| match (&args.boundary, &inst.boundary) {
            (Some(path), _) => load_boundary(path, inst.grid()),
            (None, Some(b)) => Ok(b.clone()),
            (None, None) => Err(input_error(format!("image {} has no boundary map; pass --boundary", inst.id))),
        })
        .collect::<Result<_>>()?;
    let results: Vec<(&Instance, Vec<ActivationMap>)> = instances
        .par_iter()
        .zip(&boundaries)
        .map(|(inst, b)| {
            let transition = build_transition(b, args.beta)?;
            let maps = ad_cam(&inst.features, &inst.weights, &inst.attention, &inst.labels, args.diffusion.k, cfg)?
                .iter()
                .map(|m| rw_refine(m, b, &transition, args.rw_steps))
                .collect::<camdiffuse::Result<Vec<_>>>()
                .with_context(|| format!("image {}", inst.id))?;
            Ok((inst, maps))
        })
        .collect::<Result<_>>()?;
    write_all_maps(&args.input.out, "rw", &results)?;
    save_run_record(&args.input.out, "rw-refine", args, ids(&instances))
}
