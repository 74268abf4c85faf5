//! Subcommand implementations.

use crate::config_file::{apply_config_file, parse_rgb};
use crate::{
    CensusArgs, CliError, EvalArgs, EvalSub, MeshArgs, PruneArgs, RenderArgs, SynthArgs,
    TrainArgs,
};
use objsplat_core::density::post_train_occlusion_prune;
use objsplat_core::grid::GridF;
use objsplat_core::ingest::{
    init_splats, load_png_gray, load_splats, parse_colmap, save_png_rgb, save_splats,
    write_colmap_text, SparseModel,
};
use objsplat_core::mesher::{
    cull_mesh_by_masks, fuse_bounded, fuse_object, marching_cubes, sample_mesh_surface,
    save_mesh_obj, save_mesh_ply, FusionParams, TriangleMesh,
};
use objsplat_core::metrics::{masked_psnr, masked_ssim, occlusion_census, occlusion_heatmap};
use objsplat_core::raster::{render_forward, RenderOptions};
use objsplat_core::scene::{CameraView, TrainConfig, TrainingView};
use objsplat_core::trainer::{
    load_checkpoint, new_state, run, save_checkpoint, SessionOptions,
};
use objsplat_core::{synth, Mat3, Vec3};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Dataset roots follow the COLMAP convention: sparse model under the root
/// (or root/sparse/0), images under root/images when present.
fn images_dir(root: &Path) -> PathBuf {
    let candidate = root.join("images");
    if candidate.is_dir() {
        candidate
    } else {
        root.to_path_buf()
    }
}

fn write_jsonl(path: &Path, records: &[serde_json::Value]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for record in records {
        writeln!(file, "{record}")?;
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let mut config = TrainConfig::default();
    if let Some(path) = &args.config {
        apply_config_file(&mut config, path)?;
    }
    if let Some(gamma) = args.gamma {
        config.gamma_coeff = gamma;
    }
    if let Some(iterations) = args.iterations {
        config.iterations = iterations;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.deterministic {
        config.deterministic = true;
    }
    if args.no_masking {
        config.use_masks = false;
    }
    if args.no_occlusion_prune {
        config.occlusion_prune = false;
    }

    let model = parse_colmap(&args.data)?;
    let mask_dir = if args.no_masking { None } else { args.masks.as_deref() };
    let views = objsplat_core::ingest::load_views(&model, &images_dir(&args.data), mask_dir)?;

    let state = match &args.resume {
        Some(path) => load_checkpoint(path)?,
        None => {
            let init = init_splats(&model)?;
            new_state(&init, &config)
        }
    };
    let opts = SessionOptions {
        stop_after: args.stop_after,
        checkpoint_path: args.checkpoint.clone(),
        checkpoint_interval: args.checkpoint_interval,
    };
    let (state, log) = run(&views, state, &opts)?;

    std::fs::create_dir_all(&args.out)?;
    save_splats(&args.out.join("model.ply"), &state.splats)?;
    if let Some(path) = &args.checkpoint {
        save_checkpoint(path, &state)?;
    }
    let records: Vec<serde_json::Value> = log
        .iter()
        .map(|r| {
            let mut v = serde_json::to_value(r).expect("record serializes");
            v["record"] = "iteration".into();
            v
        })
        .collect();
    write_jsonl(&args.out.join("train_log.jsonl"), &records)?;
    let last = log.last();
    println!(
        "{}",
        serde_json::json!({
            "record": "train_summary",
            "iterations": state.iteration,
            "splats": state.splats.len(),
            "final_loss": last.map(|r| r.loss.total),
            "model": args.out.join("model.ply"),
        })
    );
    Ok(())
}

fn parse_camera_spec(path: &Path) -> Result<CameraView, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut fx = None;
    let mut fy = None;
    let mut cx = None;
    let mut cy = None;
    let mut width = None;
    let mut height = None;
    let mut rotation: Option<Vec<f64>> = None;
    let mut translation: Option<Vec<f64>> = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::data(format!("camera spec: bad line `{line}`")))?;
        let value = value.trim();
        let parse_list = |v: &str| -> Result<Vec<f64>, CliError> {
            v.split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::data(format!("camera spec: bad number `{s}`")))
                })
                .collect()
        };
        match key.trim() {
            "fx" => fx = Some(parse_list(value)?[0]),
            "fy" => fy = Some(parse_list(value)?[0]),
            "cx" => cx = Some(parse_list(value)?[0]),
            "cy" => cy = Some(parse_list(value)?[0]),
            "width" => width = value.parse().ok(),
            "height" => height = value.parse().ok(),
            "rotation" => rotation = Some(parse_list(value)?),
            "translation" => translation = Some(parse_list(value)?),
            other => return Err(CliError::data(format!("camera spec: unknown key `{other}`"))),
        }
    }
    let rotation = rotation.ok_or_else(|| CliError::data("camera spec: missing rotation"))?;
    if rotation.len() != 9 {
        return Err(CliError::data("camera spec: rotation needs 9 values"));
    }
    let translation =
        translation.ok_or_else(|| CliError::data("camera spec: missing translation"))?;
    if translation.len() != 3 {
        return Err(CliError::data("camera spec: translation needs 3 values"));
    }
    let camera = CameraView {
        rotation: Mat3::from_row_slice(&rotation),
        translation: Vec3::new(translation[0], translation[1], translation[2]),
        fx: fx.ok_or_else(|| CliError::data("camera spec: missing fx"))?,
        fy: fy.ok_or_else(|| CliError::data("camera spec: missing fy"))?,
        cx: cx.ok_or_else(|| CliError::data("camera spec: missing cx"))?,
        cy: cy.ok_or_else(|| CliError::data("camera spec: missing cy"))?,
        width: width.ok_or_else(|| CliError::data("camera spec: missing width"))?,
        height: height.ok_or_else(|| CliError::data("camera spec: missing height"))?,
    };
    if !camera.pose_valid() {
        return Err(CliError::data(
            "camera spec: rotation block is not a proper rotation",
        ));
    }
    Ok(camera)
}

pub fn render(args: RenderArgs) -> Result<(), CliError> {
    let splats = load_splats(&args.model)?;
    let camera = parse_camera_spec(&args.camera)?;
    let background = parse_rgb(&args.background).map_err(CliError::usage)?;
    let out = render_forward(&splats, &camera, background, &RenderOptions::default())?;
    save_png_rgb(&args.out, &out.color)?;
    Ok(())
}

pub fn census(args: CensusArgs) -> Result<(), CliError> {
    let splats = load_splats(&args.model)?;
    let model = parse_colmap(&args.data)?;
    let cameras = model.cameras();
    let options = RenderOptions::default();
    let (report, scan) = occlusion_census(&splats, &cameras, &options)?;
    let mut record = serde_json::to_value(&report).expect("report serializes");
    record["record"] = "census".into();
    write_jsonl(&args.report, &[record.clone()])?;
    println!("{record}");
    if let Some(dir) = &args.heatmap {
        std::fs::create_dir_all(dir)?;
        let occluded: Vec<bool> = scan.contributed.iter().map(|&c| !c).collect();
        for (i, camera) in cameras.iter().enumerate() {
            let img = occlusion_heatmap(&splats, camera, &occluded, &options)?;
            save_png_rgb(&dir.join(format!("heatmap_{i:03}.png")), &img)?;
        }
    }
    Ok(())
}

pub fn prune(args: PruneArgs) -> Result<(), CliError> {
    let mut splats = load_splats(&args.model)?;
    let model = parse_colmap(&args.data)?;
    let report =
        post_train_occlusion_prune(&mut splats, &model.cameras(), &RenderOptions::default())?;
    save_splats(&args.out, &splats)?;
    let mut record = serde_json::to_value(&report).expect("report serializes");
    record["record"] = "post_train_prune".into();
    println!("{record}");
    Ok(())
}

fn load_masks_for(model: &SparseModel, dir: &Path) -> Result<Vec<GridF>, CliError> {
    model
        .records
        .iter()
        .map(|record| {
            let stem = Path::new(&record.name)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| record.name.clone());
            let gray = load_png_gray(&dir.join(format!("{stem}.png")))?;
            Ok(gray.map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }))
        })
        .collect()
}

pub fn mesh(args: MeshArgs) -> Result<(), CliError> {
    let splats = load_splats(&args.model)?;
    let model = parse_colmap(&args.data)?;
    let cameras = model.cameras();
    let volume = match args.mode.as_str() {
        "object" => fuse_object(&splats, &cameras)?,
        "bounded" => {
            let voxel_size = args.voxel_size.ok_or_else(|| {
                CliError::usage("bounded mode requires --voxel-size")
            })?;
            let d_trunc = args
                .dtrunc
                .ok_or_else(|| CliError::usage("bounded mode requires --dtrunc"))?;
            let masks = match &args.masks {
                Some(dir) => Some(load_masks_for(&model, dir)?),
                None => None,
            };
            fuse_bounded(
                &splats,
                &cameras,
                masks.as_deref(),
                &FusionParams {
                    voxel_size,
                    d_trunc,
                    max_voxels: args.max_voxels,
                },
            )?
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown mesh mode `{other}` (expected bounded or object)"
            )))
        }
    };
    let mesh = marching_cubes(&volume);
    save_mesh_ply(&args.out, &mesh)?;
    if let Some(path) = &args.obj {
        save_mesh_obj(path, &mesh)?;
    }
    println!(
        "{}",
        serde_json::json!({
            "record": "mesh_summary",
            "mode": args.mode,
            "voxel_size": volume.voxel_size,
            "vertices": mesh.vertices.len(),
            "triangles": mesh.triangles.len(),
        })
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    if let Some(EvalSub::Chamfer {
        mesh,
        ref_points,
        samples,
        seed,
    }) = args.chamfer
    {
        let mesh = objsplat_core::mesher::load_mesh_ply(&mesh)?;
        let reference = objsplat_core::mesher::load_mesh_ply(&ref_points)?;
        let sampled = if mesh.triangles.is_empty() {
            mesh.vertices.clone()
        } else {
            sample_mesh_surface(&mesh, samples, seed)
        };
        let cd = objsplat_core::metrics::chamfer_distance(&sampled, &reference.vertices)?;
        println!(
            "{}",
            serde_json::json!({"record": "chamfer", "distance": cd, "samples": sampled.len()})
        );
        return Ok(());
    }

    let gt = args
        .gt
        .ok_or_else(|| CliError::usage("eval requires --gt (or the chamfer subcommand)"))?;
    let model_path = args
        .model
        .ok_or_else(|| CliError::usage("eval requires --model"))?;
    let masks = args
        .masks
        .ok_or_else(|| CliError::usage("eval requires --masks"))?;
    let report_path = args
        .report
        .ok_or_else(|| CliError::usage("eval requires --report"))?;

    let splats = load_splats(&model_path)?;
    let model = parse_colmap(&gt)?;
    let views = objsplat_core::ingest::load_views(&model, &images_dir(&gt), Some(&masks))?;
    let options = RenderOptions::default();
    let mut records = Vec::new();
    let mut psnr_sum = 0.0;
    let mut ssim_sum = 0.0;
    for view in &views {
        let out = render_forward(&splats, &view.camera, [0.0; 3], &options)?;
        let psnr = masked_psnr(&view.image, &out.color, &view.mask)?;
        let ssim = masked_ssim(&view.image, &out.color, &view.mask)?;
        psnr_sum += psnr;
        ssim_sum += ssim;
        records.push(serde_json::json!({
            "record": "view_metrics",
            "view": view.index,
            "masked_psnr": if psnr.is_infinite() { serde_json::json!("inf") } else { serde_json::json!(psnr) },
            "masked_ssim": ssim,
        }));
    }
    let n = views.len() as f64;
    let summary = serde_json::json!({
        "record": "eval_summary",
        "views": views.len(),
        "mean_masked_psnr": psnr_sum / n,
        "mean_masked_ssim": ssim_sum / n,
    });
    records.push(summary.clone());
    write_jsonl(&report_path, &records)?;
    println!("{summary}");
    Ok(())
}

/// Writes views, masks, the COLMAP model, and ground truth to disk in the
/// layout `train`/`census`/`mesh`/`eval` consume.
fn dump_sphere_scene(scene: &synth::SphereScene, out: &Path) -> Result<(), CliError> {
    write_colmap_text(&out.join("sparse/0"), &scene.model)?;
    let img_dir = out.join("images");
    let mask_dir = out.join("masks");
    std::fs::create_dir_all(&img_dir)?;
    std::fs::create_dir_all(&mask_dir)?;
    for (view, record) in scene.views.iter().zip(&scene.model.records) {
        save_png_rgb(&img_dir.join(&record.name), &view.image)?;
        let stem = Path::new(&record.name)
            .file_stem()
            .unwrap()
            .to_string_lossy();
        objsplat_core::ingest::save_png_gray(
            &mask_dir.join(format!("{stem}.png")),
            &view.mask,
        )?;
    }
    let gt = TriangleMesh {
        vertices: scene.surface_points.clone(),
        triangles: Vec::new(),
        colors: None,
    };
    save_mesh_ply(&out.join("gt_points.ply"), &gt)?;
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    std::fs::create_dir_all(&args.out)?;
    match args.kind.as_str() {
        "sphere" => {
            let spec = synth::SphereSceneSpec {
                n_views: args.views,
                image_size: args.size,
                with_background: !args.no_background,
                seed: args.seed,
                ..Default::default()
            };
            let scene = synth::make_sphere_scene(&spec);
            dump_sphere_scene(&scene, &args.out)?;
            println!(
                "{}",
                serde_json::json!({
                    "record": "synth_summary", "kind": "sphere",
                    "views": scene.views.len(), "points": scene.model.points.len(),
                })
            );
        }
        "occluder" => {
            let scene = synth::make_occluder_scene(5, args.views, args.seed);
            save_splats(&args.out.join("model.ply"), &scene.splats)?;
            let records: Vec<objsplat_core::ingest::ImageRecord> = scene
                .cameras
                .iter()
                .enumerate()
                .map(|(i, c)| objsplat_core::ingest::ImageRecord {
                    name: format!("view_{i:03}.png"),
                    camera: c.clone(),
                })
                .collect();
            let model = SparseModel {
                records,
                points: Vec::new(),
                colors: Vec::new(),
            };
            write_colmap_text(&args.out.join("sparse/0"), &model)?;
            let img_dir = args.out.join("images");
            std::fs::create_dir_all(&img_dir)?;
            for (i, camera) in scene.cameras.iter().enumerate() {
                let out =
                    render_forward(&scene.splats, camera, [0.0; 3], &RenderOptions::default())?;
                save_png_rgb(&img_dir.join(format!("view_{i:03}.png")), &out.color)?;
            }
            let truth = serde_json::json!({
                "record": "occluder_truth",
                "hidden": scene.hidden,
                "outside": scene.outside,
                "total": scene.splats.len(),
            });
            std::fs::write(args.out.join("truth.json"), format!("{truth}\n"))?;
            println!("{truth}");
        }
        "badmask" => {
            let spec = synth::SphereSceneSpec {
                n_views: args.views,
                image_size: args.size,
                with_background: !args.no_background,
                seed: args.seed,
                ..Default::default()
            };
            let defect = synth::make_erroneous_mask_scene(
                &spec,
                args.defect_fraction,
                Vec3::new(1.0, 0.3, 0.4),
                0.35,
            );
            dump_sphere_scene(&defect.scene, &args.out)?;
            let defect_dir = args.out.join("defect_maps");
            std::fs::create_dir_all(&defect_dir)?;
            for (i, map) in defect.defect_maps.iter().enumerate() {
                objsplat_core::ingest::save_png_gray(
                    &defect_dir.join(format!("view_{i:03}.png")),
                    map,
                )?;
            }
            println!(
                "{}",
                serde_json::json!({
                    "record": "synth_summary", "kind": "badmask",
                    "defective_views": defect.defective_views,
                })
            );
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown synth kind `{other}` (expected sphere, occluder, or badmask)"
            )))
        }
    }
    Ok(())
}
