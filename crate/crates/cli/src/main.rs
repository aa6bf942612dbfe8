fn main() {
    std::process::exit(spinsim_cli::run_cli(std::env::args_os()));
}
