//! Binary entry point: parse arguments, dispatch, map errors to exit
//! codes (0 success, 1 usage or file problems, 2 numerical breakdown).

use clap::Parser;

use cfpnp_cli::commands::{
    cmd_ablation, cmd_ambiguity, cmd_gen_scene, cmd_register, cmd_toymodel, AblationArgs,
    AmbiguityArgs, GenSceneArgs, RegisterArgs, ToymodelArgs,
};

#[derive(Debug, Parser)]
#[command(
    name = "cfpnp",
    version,
    about = "Correspondence-free perspective-n-point registration"
)]
enum Cli {
    /// Register a 3D source point set to 2D targets.
    Register(RegisterArgs),
    /// Square-scene disturbance protocol over several point counts.
    Toymodel(ToymodelArgs),
    /// Tree-scene disturbance ablation of the alternating solver.
    Ablation(AblationArgs),
    /// Rotation-translation ambiguity sweep over depth ratios.
    Ambiguity(AmbiguityArgs),
    /// Generate a synthetic scene and its point files.
    GenScene(GenSceneArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let outcome = match cli {
        Cli::Register(args) => cmd_register(&args).map(|run| run.exit_code),
        Cli::Toymodel(args) => cmd_toymodel(&args).map(|_| 0),
        Cli::Ablation(args) => cmd_ablation(&args).map(|_| 0),
        Cli::Ambiguity(args) => cmd_ambiguity(&args).map(|_| 0),
        Cli::GenScene(args) => cmd_gen_scene(&args).map(|_| 0),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
