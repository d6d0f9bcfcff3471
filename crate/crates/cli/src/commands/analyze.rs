use avnet_core::model::{analyze, AvNet};

use crate::config::RunConfig;
use crate::{AnalyzeArgs, CliError};

pub fn run(args: AnalyzeArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config).map_err(CliError::usage)?;
    cfg.model.validate().map_err(CliError::usage)?;
    if args.size == 0 || !args.size.is_multiple_of(cfg.model.bottleneck_stride()) {
        return Err(CliError::Usage(format!(
            "--size must be a positive multiple of {}",
            cfg.model.bottleneck_stride()
        )));
    }
    let model = AvNet::<f32>::build(&cfg.model, 0).map_err(CliError::usage)?;
    let report = analyze(&model, (args.size, args.size));
    print!("{report}");
    if let Some(json_path) = &args.json {
        if let Some(parent) = json_path.parent() {
            let _ = std::fs::create_dir_all(parent);
        }
        std::fs::write(json_path, serde_json::to_string_pretty(&report).unwrap())
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", json_path.display())))?;
    }
    Ok(())
}
