use clap::Parser;
use pnmn_cli::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(err) = run(cli) {
        // Some errors already embed their source in their own message.
        let mut msg = err.to_string();
        for cause in err.chain().skip(1).map(ToString::to_string) {
            if !msg.contains(&cause) {
                msg = format!("{msg}: {cause}");
            }
        }
        eprintln!("error: {msg}");
        std::process::exit(exit_code(&err));
    }
}
