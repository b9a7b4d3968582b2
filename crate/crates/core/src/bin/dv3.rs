use clap::Parser;

fn main() -> std::process::ExitCode {
    let cli = dv3_core::cli::Cli::parse();
    match dv3_core::cli::run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
