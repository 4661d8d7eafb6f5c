//! Command-line driver: one subcommand per pipeline step, plus `pipeline`,
//! which chains them.

pub mod args;
pub mod commands;
pub mod plot;

use std::io::Write;

use args::{Cli, Command};
use mist_core::Result;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => commands::cmd_synth(a).map(|p| emit(&p.display().to_string())),
        Command::TrainGen(a) => commands::cmd_train_gen(a),
        Command::Pseudo(a) => commands::cmd_pseudo(a),
        Command::Finetune(a) => commands::cmd_finetune(a),
        Command::Score(a) => commands::cmd_score(a),
        Command::Eval(a) => commands::cmd_eval(a).map(|_| ()),
        Command::Plot(a) => commands::cmd_plot(a).map(|_| ()),
        Command::Pipeline(a) => commands::cmd_pipeline(a).map(|o| emit(&o.report.to_json())),
    }
}

/// Prints to stdout, ignoring a closed pipe.
pub(crate) fn emit(text: &str) {
    let _ = writeln!(std::io::stdout(), "{text}");
}
