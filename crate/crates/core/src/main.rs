fn main() {
    std::process::exit(motion_ddgan::cli::main_with_args(std::env::args_os()));
}
