use std::process::ExitCode;

use clap::Parser;
use quietgait_cli::args::{Cli, Command};
use quietgait_cli::commands;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => commands::train(a).map(|dirs| {
            for d in dirs {
                println!("{}", d.display());
            }
        }),
        Command::Eval(a) => commands::evaluate(a).map(drop),
        Command::Pareto(a) => commands::pareto(a).map(drop),
        Command::Audio(a) => commands::audio(a).map(drop),
        Command::Serve(a) => commands::serve(a),
        Command::Config(a) => commands::print_config(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
