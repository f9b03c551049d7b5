fn main() {
    std::process::exit(thinfilm_core::cli::cli_main(std::env::args_os()));
}
