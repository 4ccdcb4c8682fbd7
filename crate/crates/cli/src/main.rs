mod args;
mod commands;
mod resolve;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Invalid flags or config values; exit status 1.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// 1 for bad input (flags, config, dataset contents), 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<molspectra::Error>() {
            return if e.is_validation() || matches!(e, molspectra::Error::Dataset(_)) { 1 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Pretrain(a) => commands::pretrain(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::VerifyEquivalence(a) => commands::verify_equivalence_cmd(a),
        Command::Encode(a) => commands::encode(a),
        Command::DumpAttention(a) => commands::dump_attention(a),
        Command::EvalRetrieval(a) => commands::eval_retrieval_cmd(a),
        Command::Ablate(a) => commands::ablate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        let usage = anyhow::Error::new(UsageError("x".into()));
        assert_eq!(exit_code(&usage), 1);
        let cfg = anyhow::Error::new(molspectra::Error::Config("x".into()));
        assert_eq!(exit_code(&cfg), 1);
        let data = anyhow::Error::new(molspectra::Error::Dataset("x".into())).context("loading");
        assert_eq!(exit_code(&data), 1);
        let ck = anyhow::Error::new(molspectra::Error::Checkpoint("x".into()));
        assert_eq!(exit_code(&ck), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("boom")), 2);
    }
}
