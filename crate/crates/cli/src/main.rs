use clap::Parser;

fn main() {
    let cli = cascade_screen_cli::app::Cli::parse();
    std::process::exit(cascade_screen_cli::app::run(cli));
}
