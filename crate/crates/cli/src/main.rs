use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = nnpforge_cli::Cli::parse();
    match nnpforge_cli::run(cli) {
        Ok((dir, _)) => println!("outputs in {}", dir.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
