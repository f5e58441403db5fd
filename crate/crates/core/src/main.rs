fn main() {
    std::process::exit(ilslam::cli::main_with_args(std::env::args_os()));
}
