fn main() {
    std::process::exit(readout_core::cli::run_command(std::env::args_os()));
}
