fn main() {
    std::process::exit(shapefda_cli::main_with_args(std::env::args_os().skip(1)));
}
