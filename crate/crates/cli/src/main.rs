use clap::{Parser, Subcommand};
use milpool_cli::{
    run_compare, run_eval, run_generate, run_gradcheck, run_train, CompareArgs, EvalArgs,
    GenerateArgs, GradcheckArgs, TrainArgs, UsageError, EXIT_FAILURE, EXIT_OK, EXIT_USAGE,
};

/// MIL pooling toolkit for weakly labeled sound event detection.
#[derive(Parser)]
#[command(name = "milpool", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic weakly labeled corpus with frame-level truth.
    Generate(GenerateArgs),
    /// Check analytic pooling and model gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Train one model through a pooling function.
    Train(TrainArgs),
    /// Evaluate a checkpoint: tagging, localization, and ranking metrics.
    Eval(EvalArgs),
    /// Train and evaluate all five pooling functions side by side.
    Compare(CompareArgs),
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Generate(args) => {
            let config = run_generate(&args)?;
            println!(
                "wrote {} + {} + {} recordings ({} classes) to {}",
                config.train_recordings,
                config.val_recordings,
                config.test_recordings,
                config.classes,
                args.out.display()
            );
            Ok(EXIT_OK)
        }
        Command::Gradcheck(args) => {
            let report = run_gradcheck(&args)?;
            print!("{report}");
            Ok(if report.passed() { EXIT_OK } else { EXIT_FAILURE })
        }
        Command::Train(args) => {
            run_train(&args)?;
            Ok(EXIT_OK)
        }
        Command::Eval(args) => {
            run_eval(&args)?;
            Ok(EXIT_OK)
        }
        Command::Compare(args) => {
            let output = run_compare(&args)?;
            println!("{}", std::fs::read_to_string(args.out.join("comparison.txt"))?);
            println!("wrote {} system reports to {}", output.systems.len(), args.out.display());
            Ok(EXIT_OK)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.is::<UsageError>() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    };
    std::process::exit(code);
}
