fn main() {
    std::process::exit(fleet_stability::cli::main_with_args(std::env::args_os()));
}
