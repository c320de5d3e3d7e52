fn main() {
    std::process::exit(kdvlab_cli::main_with(std::env::args_os()));
}
