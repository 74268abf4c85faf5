//! Flat key=value config files mirroring the training configuration fields.
//! Lines starting with `#` are comments; flags override file values.

use crate::CliError;
use objsplat_core::scene::TrainConfig;
use std::path::Path;

pub fn apply_config_file(config: &mut TrainConfig, path: &Path) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::usage(format!(
                "{}:{}: expected key=value, got `{line}`",
                path.display(),
                lineno + 1
            ))
        })?;
        apply_key(config, key.trim(), value.trim()).map_err(|msg| {
            CliError::usage(format!("{}:{}: {msg}", path.display(), lineno + 1))
        })?;
    }
    Ok(())
}

fn apply_key(config: &mut TrainConfig, key: &str, value: &str) -> Result<(), String> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
        value
            .parse::<T>()
            .map_err(|_| format!("bad value `{value}` for {key}"))
    }
    match key {
        "iterations" => config.iterations = parse(key, value)?,
        "alpha_coeff" => config.alpha_coeff = parse(key, value)?,
        "beta_coeff" => config.beta_coeff = parse(key, value)?,
        "gamma_coeff" => config.gamma_coeff = parse(key, value)?,
        "lambda_dssim" => config.lambda_dssim = parse(key, value)?,
        "distortion_from_iter" => config.distortion_from_iter = parse(key, value)?,
        "normal_from_iter" => config.normal_from_iter = parse(key, value)?,
        "occlusion_prune_interval" => {
            config.occlusion_prune_interval = Some(parse(key, value)?)
        }
        "densify_interval" => config.densify_interval = parse(key, value)?,
        "densify_from_iter" => config.densify_from_iter = parse(key, value)?,
        "densify_until_iter" => config.densify_until_iter = Some(parse(key, value)?),
        "densify_grad_threshold" => config.densify_grad_threshold = parse(key, value)?,
        "percent_dense" => config.percent_dense = parse(key, value)?,
        "opacity_reset_interval" => config.opacity_reset_interval = parse(key, value)?,
        "opacity_prune_threshold" => config.opacity_prune_threshold = parse(key, value)?,
        "max_world_scale_ratio" => config.max_world_scale_ratio = parse(key, value)?,
        "max_screen_radius_px" => config.max_screen_radius_px = parse(key, value)?,
        "sh_degree_max" => config.sh_degree_max = parse(key, value)?,
        "sh_upgrade_interval" => config.sh_upgrade_interval = parse(key, value)?,
        "lr_position" => config.lr_position = parse(key, value)?,
        "lr_position_final" => config.lr_position_final = parse(key, value)?,
        "lr_sh" => config.lr_sh = parse(key, value)?,
        "lr_sh_rest" => config.lr_sh_rest = parse(key, value)?,
        "lr_opacity" => config.lr_opacity = parse(key, value)?,
        "lr_scale" => config.lr_scale = parse(key, value)?,
        "lr_rotation" => config.lr_rotation = parse(key, value)?,
        "alpha_termination_threshold" => {
            config.alpha_termination_threshold = parse(key, value)?
        }
        "min_splat_alpha" => config.min_splat_alpha = parse(key, value)?,
        "background" => config.background = parse_rgb(value)?,
        "seed" => config.seed = parse(key, value)?,
        "deterministic" => config.deterministic = parse(key, value)?,
        "use_masks" => config.use_masks = parse(key, value)?,
        "occlusion_prune" => config.occlusion_prune = parse(key, value)?,
        other => return Err(format!("unknown config key `{other}`")),
    }
    Ok(())
}

pub fn parse_rgb(value: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected r,g,b, got `{value}`"));
    }
    let mut rgb = [0.0; 3];
    for (slot, part) in rgb.iter_mut().zip(parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|_| format!("bad color component `{part}`"))?;
    }
    Ok(rgb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_apply_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.cfg");
        std::fs::write(&path, "# comment\niterations = 123\ngamma_coeff=0.75\n").unwrap();
        let mut config = TrainConfig::default();
        apply_config_file(&mut config, &path).unwrap();
        assert_eq!(config.iterations, 123);
        assert_eq!(config.gamma_coeff, 0.75);

        std::fs::write(&path, "no_such_key = 1\n").unwrap();
        let err = apply_config_file(&mut config, &path).unwrap_err();
        assert_eq!(err.code, 1);
    }

    #[test]
    fn rgb_parsing() {
        assert_eq!(parse_rgb("0.1, 0.2,0.3").unwrap(), [0.1, 0.2, 0.3]);
        assert!(parse_rgb("1,2").is_err());
    }
}
