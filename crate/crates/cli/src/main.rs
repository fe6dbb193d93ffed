use clap::{Parser, Subcommand};

use dsn_cli::commands::{
    cmd_ablate, cmd_eval, cmd_itq, cmd_simmat, cmd_split, cmd_synth, cmd_train, AblateArgs,
    EvalArgs, ItqArgs, SimmatArgs, SplitArgs, SynthArgs, TrainArgs,
};
use dsn_cli::CliError;

/// Cross-modal zero-shot retrieval pipeline: synthesize two-modality feature
/// data, train the retrieval model, and evaluate with cosine or binary-code
/// ranking.
#[derive(Parser, Debug)]
#[command(name = "dsn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic paired image/sketch feature files.
    Synth(SynthArgs),
    /// Draw a zero-shot seen/unseen category split.
    Split(SplitArgs),
    /// Train a model and write checkpoint plus loss log.
    Train(TrainArgs),
    /// Evaluate retrieval and write a per-query report.
    Eval(EvalArgs),
    /// Fit a binary encoder and write codes.
    Itq(ItqArgs),
    /// Export the per-category sketch/image similarity matrix.
    Simmat(SimmatArgs),
    /// Run the four-configuration ablation and emit a comparison table.
    Ablate(AblateArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Split(args) => cmd_split(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Itq(args) => cmd_itq(args),
        Command::Simmat(args) => cmd_simmat(args),
        Command::Ablate(args) => cmd_ablate(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
