//! Command-line interface for the detector: dataset generation, training,
//! evaluation, operator gradient checks, and single-image inference.

mod eval_cmd;
mod gen_data;
mod gradcheck_cmd;
mod infer_cmd;
mod model_setup;
mod options;
mod train_cmd;

use options::{CliError, Options};

const USAGE: &str = "\
usage: inceptext <command> [--config <path>] [options]

commands:
  gen-data   write a synthetic dataset     --out DIR [--count N --seed S
             --width W --height H --min-boxes N --max-boxes N]
  train      train a detector              --dataset DIR --checkpoint OUT
             --out METRICS [--iterations N --lr F --lambda-m F --seed S
             --variant full|plain --log-interval N --checkpoint-interval N]
  eval       score a checkpoint            --checkpoint CKPT --dataset DIR
             [--iou-threshold F --score-threshold F --out REPORT]
  gradcheck  verify operator gradients     [--scope all|<operator>]
  infer      detect text in one image      --checkpoint CKPT --image PPM
             --out FILE [--dump-visuals --score-threshold F]

A config file holds `key = value` lines ('#' comments); flags override it.
Exit codes: 0 success, 1 validation error, 2 runtime failure,
3 gradient-check failures.
";

fn dispatch(command: &str, opts: &Options) -> Result<(), CliError> {
    match command {
        "gen-data" => gen_data::run(opts),
        "train" => train_cmd::run(opts),
        "eval" => eval_cmd::run(opts),
        "gradcheck" => gradcheck_cmd::run(opts),
        "infer" => infer_cmd::run(opts),
        other => Err(options::validation(format!(
            "unknown command {other:?}\n\n{USAGE}"
        ))),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = args.first() else {
        eprint!("{USAGE}");
        std::process::exit(1);
    };
    if command == "--help" || command == "help" || command == "-h" {
        print!("{USAGE}");
        return;
    }
    let result = Options::parse(&args[1..]).and_then(|opts| dispatch(command, &opts));
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
