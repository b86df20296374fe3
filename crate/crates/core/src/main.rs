fn main() {
    std::process::exit(bprg::cli::run_cli(std::env::args_os()));
}
