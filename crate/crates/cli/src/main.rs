use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = tabsight_cli::Cli::parse();
    let stdout = std::io::stdout();
    if let Err(e) = tabsight_cli::run(cli, &mut stdout.lock()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
