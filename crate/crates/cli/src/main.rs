use std::io::{self, Write};
use std::process::ExitCode;

use clap::Parser;
use xrl_cli::{cmd_eval, cmd_explain, cmd_serve, cmd_train, Cli, Command};

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    let mut out = io::stdout().lock();
    let mut err = io::stderr();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, &mut out, &mut err),
        Command::Explain(a) => cmd_explain(a, &mut out),
        Command::Eval(a) => cmd_eval(a, &mut out),
        Command::Serve(a) => tokio::runtime::Runtime::new()
            .map_err(anyhow::Error::from)
            .and_then(|rt| rt.block_on(cmd_serve(a, &mut err))),
    };
    let _ = out.flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
