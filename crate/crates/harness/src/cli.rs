//! Argument parsing and dispatch for the `dpols` binary.
//!
//! Every configuration key of a subcommand is also a `--key value` flag
//! (underscores become dashes). Values from `--config FILE` are applied
//! first and flags override them.

use crate::commands::{accuracy, bench, fit, generate, sigma, stability};
use crate::config::{load_config, KeySpec, Params};
use crate::error::{HarnessError, Result, Status, ERROR_EXIT};
use clap::{Arg, ArgAction, ArgMatches, Command};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

struct Subcommand {
    name: &'static str,
    about: &'static str,
    input: bool,
    keys: fn() -> Vec<KeySpec>,
}

const SUBCOMMANDS: &[Subcommand] = &[
    Subcommand { name: "fit", about: "Fit the private estimator to a CSV dataset", input: true, keys: || fit::KEYS.to_vec() },
    Subcommand { name: "generate", about: "Write a synthetic dataset (and optionally a neighbour)", input: false, keys: generate::keys },
    Subcommand { name: "stability", about: "Check stability bounds on adjacent dataset pairs", input: false, keys: stability::keys },
    Subcommand { name: "accuracy", about: "Monte-Carlo error of the estimator over n and kappa", input: false, keys: accuracy::keys },
    Subcommand { name: "bench", about: "Time the estimator phases over a grid of n", input: false, keys: || bench::KEYS.to_vec() },
    Subcommand { name: "sigma", about: "Privately estimate the label noise variance of a CSV dataset", input: true, keys: || sigma::KEYS.to_vec() },
];

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn value_arg(spec: &KeySpec) -> Arg {
    let help = match spec.default {
        Some(d) => format!("{} [default: {d}]", spec.help),
        None => spec.help.to_string(),
    };
    Arg::new(spec.key).long(flag_name(spec.key)).value_name("VALUE").help(help)
}

fn shared_args(cmd: Command) -> Command {
    cmd.arg(Arg::new("seed").long("seed").value_name("SEED").help("root seed [default: 0]"))
        .arg(Arg::new("config").long("config").value_name("FILE").help("flat key = value config file"))
        .arg(Arg::new("out").long("out").value_name("DIR").help("output directory [default: dpols-out]"))
        .arg(
            Arg::new("strict_privacy")
                .long("strict-privacy")
                .action(ArgAction::SetTrue)
                .help("suppress diagnostics outside the privacy guarantee"),
        )
        .arg(Arg::new("plots").long("plots").action(ArgAction::SetTrue).help("also write SVG plots"))
}

pub fn command() -> Command {
    let mut root = Command::new("dpols")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Differentially private least squares: estimator and experiment harness")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for sub in SUBCOMMANDS {
        let mut cmd = shared_args(Command::new(sub.name).about(sub.about));
        if sub.input {
            cmd = cmd.arg(Arg::new("input").value_name("INPUT").required(true).help("CSV with header x1..xd,y"));
        }
        for spec in (sub.keys)() {
            cmd = cmd.arg(value_arg(&spec));
        }
        root = root.subcommand(cmd);
    }
    root
}

fn collect(matches: &ArgMatches, keys: &[KeySpec]) -> BTreeMap<String, String> {
    let mut cli = BTreeMap::new();
    for spec in keys {
        if let Some(v) = matches.get_one::<String>(spec.key) {
            cli.insert(spec.key.to_string(), v.clone());
        }
    }
    for key in ["seed", "out"] {
        if let Some(v) = matches.get_one::<String>(key) {
            cli.insert(key.to_string(), v.clone());
        }
    }
    for key in ["strict_privacy", "plots"] {
        if matches.get_flag(key) {
            cli.insert(key.to_string(), "true".to_string());
        }
    }
    cli
}

fn dispatch(name: &str, matches: &ArgMatches, keys: &[KeySpec], stdout: &mut dyn Write) -> Result<Status> {
    let file = match matches.get_one::<String>("config") {
        Some(path) => load_config(&PathBuf::from(path))?,
        None => BTreeMap::new(),
    };
    let params = Params::resolve(keys, file, collect(matches, keys))?;
    let input = matches.try_get_one::<String>("input").ok().flatten().map(PathBuf::from);
    match name {
        "fit" => fit::run(input.as_deref().expect("required by clap"), &params, stdout),
        "sigma" => sigma::run(input.as_deref().expect("required by clap"), &params, stdout),
        "generate" => generate::run(&params, stdout),
        "stability" => stability::run(&params, stdout),
        "accuracy" => accuracy::run(&params, stdout),
        "bench" => bench::run(&params, stdout),
        other => Err(HarnessError::usage(format!("unknown subcommand `{other}`"))),
    }
}

/// Parses `args`, runs the subcommand and returns the process exit code.
pub fn run(args: impl IntoIterator<Item = OsString>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> u8 {
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { ERROR_EXIT } else { 0 };
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(stdout, "{rendered}");
            } else {
                let _ = write!(stderr, "{rendered}");
            }
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let spec = SUBCOMMANDS.iter().find(|s| s.name == name).expect("registered subcommand");
    let keys = (spec.keys)();
    match dispatch(name, sub, &keys, stdout) {
        Ok(status) => status.code(),
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            ERROR_EXIT
        }
    }
}
