use std::process::ExitCode;

use clap::Parser;
use sketchxai_app::cli::{run, Cli};
use sketchxai_app::error_body;
use sketchxai_app::wire::{ErrorBody, ErrorEnvelope};

fn fail(body: &ErrorBody, code: u8) -> ExitCode {
    eprintln!(
        "{}",
        serde_json::to_string(&ErrorEnvelope { error: body }).expect("error body serializes")
    );
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let body = ErrorBody {
                kind: "usage".into(),
                message: e.to_string().trim().to_owned(),
                path: None,
            };
            return fail(&body, 2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&error_body(&e), 1),
    }
}
